"""Access to the bundled seed corpus under data/seeds/"""

import glob
import os
from typing import List

from src.dsl.parser import SourceText

SEED_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))), "data", "seeds")


def seed_paths() -> List[str]:
    return sorted(glob.glob(os.path.join(SEED_DIR, "*.netdsl")))


def read_source(path: str) -> SourceText:
    with open(path, "r", encoding="utf-8") as f:
        return SourceText.traced(f.read())


def load_seed(name: str) -> SourceText:
    """Seed by file stem, e.g. load_seed('alexnet_cifar')"""
    return read_source(os.path.join(SEED_DIR, f"{name}.netdsl"))
