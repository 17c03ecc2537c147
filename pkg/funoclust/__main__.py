from . import cli

# Allows running as "python -m funoclust" when the console script is not on
# the PATH.
if __name__ == "__main__":
    cli.funoclust()
