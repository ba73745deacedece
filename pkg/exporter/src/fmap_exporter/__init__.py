"""Export CNN feature maps of proposal crops to the FMAP format."""

from .backbone import Backbone
from .export import ExportJob, Proposal, export
from .fmap import write_fmap

__version__ = "0.1.0"
