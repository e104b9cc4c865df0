import unittest

from hypothesis import given, settings, strategies as st

from src.dsl import load_seed, parse, seed_paths, read_source
from src.errors import ShapeMismatch
from src.graph import analyze_net, build_groups, derived_slots, group_of, infer_shapes, repair_derived
from src.ir.arch_ir import LayerKind, build_network

CONV = dict(kernel=3, stride=1, padding=1, groups=1)


def chain_net():
    return build_network("chain", (3, 8, 8), 4, [
        ("A", LayerKind.CONV2D, dict(CONV, in_channels=3, out_channels=8), ["input"]),
        ("B", LayerKind.CONV2D, dict(CONV, in_channels=8, out_channels=6), ["A"]),
        ("f", LayerKind.FLATTEN, {}, ["B"]),
        ("out", LayerKind.LINEAR, dict(in_features=384, out_features=4), ["f"]),
    ])


def residual_net():
    return build_network("res", (3, 8, 8), 4, [
        ("S", LayerKind.CONV2D, dict(CONV, in_channels=3, out_channels=8), ["input"]),
        ("A", LayerKind.CONV2D, dict(CONV, in_channels=8, out_channels=8), ["S"]),
        ("sum", LayerKind.ADD, {}, ["S", "A"]),
        ("C", LayerKind.CONV2D, dict(CONV, in_channels=8, out_channels=5), ["sum"]),
        ("f", LayerKind.FLATTEN, {}, ["C"]),
        ("out", LayerKind.LINEAR, dict(in_features=320, out_features=4), ["f"]),
    ])


class TestShapes(unittest.TestCase):

    def test_01_same_padding_and_pooling(self):
        net = build_network("p", (3, 32, 32), 2, [
            ("c", LayerKind.CONV2D, dict(CONV, in_channels=3, out_channels=4), ["input"]),
            ("m", LayerKind.MAXPOOL2D, dict(kernel=2, stride=2, padding=0), ["c"]),
            ("f", LayerKind.FLATTEN, {}, ["m"]),
            ("out", LayerKind.LINEAR, dict(in_features=1024, out_features=2), ["f"]),
        ])
        shapes = infer_shapes(net)
        self.assertEqual(shapes["c"], (4, 32, 32))
        self.assertEqual(shapes["m"], (4, 16, 16))
        self.assertEqual(shapes["f"], (1024,))

    def test_02_alexnet_seed(self):
        shapes = infer_shapes(parse(load_seed("alexnet_cifar")))
        self.assertEqual(shapes["p1"], (64, 16, 16))
        self.assertEqual(shapes["p3"], (256, 4, 4))
        self.assertEqual(shapes["fl"], (4096,))
        self.assertEqual(shapes["out"], (100,))

    def test_03_linear_mismatch(self):
        text = load_seed("alexnet_cifar").text.replace("linear(in=4096", "linear(in=4000")
        with self.assertRaises(ShapeMismatch) as ctx:
            infer_shapes(parse(text))
        self.assertEqual(ctx.exception.layer_id, "fc1")
        self.assertEqual((ctx.exception.expected, ctx.exception.got), (4000, 4096))

    def test_04_concat_sums_channels(self):
        shapes = infer_shapes(parse(load_seed("inception_concat")))
        self.assertEqual(shapes["cat"], (20, 16, 16))

    def test_05_every_seed_infers(self):
        for path in seed_paths():
            infer_shapes(parse(read_source(path)))


class TestGroups(unittest.TestCase):

    def groups(self, net):
        return build_groups(net, infer_shapes(net))

    def test_01_chain(self):
        groups = self.groups(chain_net())
        group = group_of(groups, ("A", "out_channels"))
        self.assertEqual(set(group.slots), {("A", "out_channels"), ("B", "in_channels")})
        self.assertTrue(group.mutable)
        self.assertEqual(group.driver, ("A", "out_channels"))

    def test_02_residual_add(self):
        groups = self.groups(residual_net())
        group = group_of(groups, ("S", "out_channels"))
        self.assertEqual(set(group.slots), {("S", "out_channels"), ("A", "in_channels"),
                                            ("A", "out_channels"), ("C", "in_channels")})
        self.assertEqual(group.driver, ("S", "out_channels"))

    def test_03_input_and_sink_fixed(self):
        groups = self.groups(chain_net())
        self.assertTrue(group_of(groups, ("A", "in_channels")).fixed)
        self.assertTrue(group_of(groups, ("out", "out_features")).fixed)

    def test_04_flatten_feeds_derived_slot(self):
        groups = self.groups(chain_net())
        self.assertIn(("out", "in_features"), derived_slots(groups))
        self.assertFalse(group_of(groups, ("B", "out_channels")).fixed)

    def test_05_depthwise(self):
        groups = self.groups(parse(load_seed("depthwise")))
        group = group_of(groups, ("pc", "out_channels"))
        self.assertTrue({("pc", "out_channels"), ("dw", "in_channels"), ("dw", "out_channels"),
                         ("bn1", "num_features"), ("bn2", "num_features")} <= set(group.slots))
        self.assertEqual(group.depthwise, (("dw", 32),))
        self.assertTrue(group.mutable)

    def test_06_grouped_divisors(self):
        groups = self.groups(parse(load_seed("grouped")))
        self.assertEqual(group_of(groups, ("c1", "out_channels")).divisors, (8,))
        self.assertEqual(group_of(groups, ("g2", "out_channels")).step, 8)

    def test_07_concat_consumers_are_derived(self):
        groups = self.groups(parse(load_seed("inception_concat")))
        self.assertTrue(group_of(groups, ("c2", "in_channels")).derived)
        self.assertTrue(group_of(groups, ("b1", "out_channels")).mutable)
        self.assertTrue(group_of(groups, ("b2", "out_channels")).mutable)

    def test_08_concat_conflict_fixes_operands(self):
        net = build_network("clash", (3, 8, 8), 2, [
            ("a", LayerKind.CONV2D, dict(CONV, in_channels=3, out_channels=4), ["input"]),
            ("b", LayerKind.CONV2D, dict(CONV, in_channels=3, out_channels=4), ["input"]),
            ("cat", LayerKind.CONCAT, dict(axis=1), ["a", "b"]),
            ("c", LayerKind.CONV2D, dict(CONV, in_channels=3, out_channels=8), ["input"]),
            ("sum", LayerKind.ADD, {}, ["cat", "c"]),
            ("f", LayerKind.FLATTEN, {}, ["sum"]),
            ("out", LayerKind.LINEAR, dict(in_features=512, out_features=2), ["f"]),
        ])
        groups = self.groups(net)
        for slot in (("a", "out_channels"), ("b", "out_channels"), ("c", "out_channels")):
            self.assertTrue(group_of(groups, slot).fixed, slot)

    def test_09_partition(self):
        for path in seed_paths():
            net = parse(read_source(path))
            groups = self.groups(net)
            seen = [slot for g in groups for slot in g.slots]
            self.assertEqual(len(seen), len(set(seen)))
            expected = {slot for layer in net.layers for slot in layer.channel_slots}
            self.assertEqual(set(seen), expected)

    def test_10_report_is_deterministic(self):
        net = parse(load_seed("residual"))
        first, second = analyze_net(net), analyze_net(net)
        self.assertEqual(first, second)
        self.assertIn("  sum Add 32x16x16", first)

    @settings(max_examples=60, deadline=None)
    @given(st.sampled_from(["alexnet_cifar", "tiny_alex", "residual", "inception_concat", "depthwise", "grouped"]),
           st.integers(0, 10 ** 6), st.integers(1, 96))
    def test_11_group_soundness(self, seed_name, pick, multiple):
        net = parse(load_seed(seed_name))
        groups = self.groups(net)
        mutable = [g for g in groups if g.mutable]
        group = mutable[pick % len(mutable)]
        width = group.step * multiple
        assignments = {slot: width for slot in group.slots}
        for layer_id, g in group.depthwise:
            if width % g:
                assignments[(layer_id, "groups")] = 1
        mutated, _ = repair_derived(net.with_assignments(assignments), derived_slots(groups))
        infer_shapes(mutated)


if __name__ == '__main__':
    unittest.main(verbosity=2)
