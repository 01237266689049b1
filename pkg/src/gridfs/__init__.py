"""A grid file system: virtual catalogue, storage elements, cache-and-forward
I/O servers and a transfer queue, runnable over real sockets or a simulator."""

from .access import AccessStrategy, ClientConfig, GridClient, OpenMode, select_best_replica
from .errors import GridError
from .names import LfnPath, Pfn

__all__ = ["AccessStrategy", "ClientConfig", "GridClient", "OpenMode", "select_best_replica",
           "GridError", "LfnPath", "Pfn"]
__version__ = "0.1.0"
