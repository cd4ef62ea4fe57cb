"""Gallery-based retrieval evaluation of identity preservation."""

from ._galleryrank import *  # noqa: F401,F403
from ._galleryrank import GalleryrankError, __version__  # noqa: F401
