__version__ = "undefined"
try:
    from . import _version

    __version__ = _version.version
except ImportError:  # pragma: nocover
    pass


def source():
    """
    Provenance block recorded in every summary.json.
    """
    return {"source": f"funoclust-{__version__}"}
