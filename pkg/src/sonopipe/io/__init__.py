"""MetaImage and raw channel-data files, and the command-line interface."""

from .mhd import read_header, read_mhd, write_mhd
from .rawfile import RawFrameWriter, iter_raw, read_raw, read_raw_header, write_raw

__all__ = ["read_header", "read_mhd", "write_mhd", "RawFrameWriter", "iter_raw", "read_raw", "read_raw_header", "write_raw"]
