"""Data loading, declarative data blocks, built-in datasets and batch rendering."""
from .block import (CategoryBlock, DataBlock, FuncSplitter, GrandparentSplitter, ImageBlock,
                    IndexSplitter, MaskBlock, RandomSplitter, RegexLabeller, TransformBlock,
                    VectorBlock, get_csv_records, get_image_files, parent_label, regex_label)
from .external import DatasetEntry, DatasetRegistry, default_registry, fetch_dataset
from .load import HOOKS, DataLoader, DataLoaders, collate, shuffle_rng
from .show import show_batch
