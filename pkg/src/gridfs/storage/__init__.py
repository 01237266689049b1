from .cache import LocalDiskCache
from .element import SeConfig, StorageElement
from .lvm import LvmState, Placement, Volume
from .plugins import IN, OUT, FilePlugin, MemPlugin, SePlugin, make_plugin
from .service import SeClient, SeService

__all__ = ["SePlugin", "FilePlugin", "MemPlugin", "make_plugin", "IN", "OUT", "Volume",
           "Placement", "LvmState", "LocalDiskCache", "SeConfig", "StorageElement",
           "SeService", "SeClient"]
