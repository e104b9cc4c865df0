from src.dsl.edits import Edit, apply_edits
from src.dsl.parser import LiteralRef, SourceText, literal_table, parse
from src.dsl.printer import print_net
from src.dsl.seeds import SEED_DIR, load_seed, read_source, seed_paths
