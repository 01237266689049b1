from .service import CatalogueClient, CatalogueService
from .tree import Catalogue, CatalogueEntry, DirectoryTable

__all__ = ["Catalogue", "CatalogueEntry", "DirectoryTable", "CatalogueService",
           "CatalogueClient"]
