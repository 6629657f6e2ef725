from .coords import CoordIndex, pack, unpack
from .layers import MSTCN, Bottleneck, ConfigError, ConvBNReLU, SubMConv
from .ops import global_sparse_max_pool, sparse_max_pool, submanifold_conv
from .tensor import CoordSet, SparseTensor4D, kernel_offsets, parse_dump, voxelize

__all__ = [
    "Bottleneck",
    "ConfigError",
    "ConvBNReLU",
    "CoordIndex",
    "CoordSet",
    "MSTCN",
    "SparseTensor4D",
    "SubMConv",
    "global_sparse_max_pool",
    "kernel_offsets",
    "pack",
    "parse_dump",
    "sparse_max_pool",
    "submanifold_conv",
    "unpack",
    "voxelize",
]
