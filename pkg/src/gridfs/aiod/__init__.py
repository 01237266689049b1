from .client import AiodSession
from .gatekeeper import GateKeeperConfig, LoadReport, load_score, pick_io_slave
from .pagestore import CachePage, PageStore
from .paging import covering_pages, page_size_for
from .ratelimit import TokenBucket
from .route import AccessTicket, RouteChain
from .server import AiodServer, open_following

__all__ = ["AiodServer", "AiodSession", "AccessTicket", "RouteChain", "GateKeeperConfig",
           "LoadReport", "load_score", "pick_io_slave", "PageStore", "CachePage",
           "page_size_for", "covering_pages", "TokenBucket", "open_following"]
