from src.graph.groups import MutationGroup, UnionFind, build_groups, derived_slots, group_of
from src.graph.report import analyze_net, format_report
from src.graph.shapes import ShapeMap, conv_output_size, infer_shapes, layer_output_shape, repair_derived
