import unittest
from dataclasses import replace

from hypothesis import given, settings, strategies as st

from src.dsl import Edit, SourceText, apply_edits, load_seed, parse, print_net, read_source, seed_paths
from src.errors import EditError, NetSyntaxError, OverlapError, SemanticError, SpanOutOfRange
from src.ir.arch_ir import LayerKind, validate_ir

SMALL = """network Small {
  input 3x8x8;  # comment with ünïcode
  classes 2;
  c1: conv(in=3, out=4, k=3, p=1);
  r1: relu(c1);
  fl: flatten();
  out: linear(in=256, out=2);
}
"""


class TestParser(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.alex = load_seed("alexnet_cifar")
        cls.alex_net = parse(cls.alex)

    def test_01_seed_corpus_round_trips(self):
        paths = seed_paths()
        self.assertGreaterEqual(len(paths), 5)
        for path in paths:
            src = read_source(path)
            net = parse(src)
            printed = print_net(net)
            # seeds are stored in canonical form
            self.assertEqual(printed.text, src.text, path)
            self.assertEqual(parse(printed), net)

    def test_02_spans_point_at_literals(self):
        for path in seed_paths():
            src = read_source(path)
            net = parse(src)
            data = src.data
            for layer in net.layers:
                for attr, span in layer.source_spans.items():
                    literal = data[span.start:span.end].decode()
                    self.assertEqual(literal, str(layer.params[attr]), f"{path} {layer.id}.{attr}")

    def test_03_every_channel_attribute_has_a_span(self):
        for layer in self.alex_net.layers:
            for layer_id, attr in layer.channel_slots:
                self.assertIn(attr, layer.source_spans)

    def test_04_defaults_and_positional_inputs(self):
        net = parse(SMALL)
        c1 = net.layer("c1")
        self.assertEqual(c1.params["stride"], 1)
        self.assertEqual(c1.params["groups"], 1)
        self.assertNotIn("groups", c1.source_spans)
        self.assertEqual(net.producers("r1"), ["c1"])
        self.assertEqual(net.producers("fl"), ["r1"])
        self.assertEqual(net.producers("c1"), ["input"])
        self.assertEqual(net.layer("out").kind, LayerKind.LINEAR)

    def test_05_undefined_reference(self):
        src = "network X { input 3x8x8; classes 2; out: linear(in=192, out=2, from=input_flat); }"
        with self.assertRaises(SemanticError) as ctx:
            parse(src)
        self.assertEqual(ctx.exception.code, "undefined-reference")
        self.assertEqual(ctx.exception.offset, src.index("input_flat"))

    def test_06_empty_input(self):
        with self.assertRaises(NetSyntaxError) as ctx:
            parse("")
        self.assertEqual(ctx.exception.offset, 0)

    def test_07_syntax_error_reports_expected_tokens(self):
        src = "network X { input 3x8x8; classes 2; c: conv(in=3 out=4, k=1); }"
        with self.assertRaises(NetSyntaxError) as ctx:
            parse(src)
        self.assertEqual(ctx.exception.offset, src.index("out="))
        self.assertIn("')'", ctx.exception.expected)

    def test_08_cycle_and_duplicates(self):
        cyc = ("network X { input 4x2x2; classes 2; a: add(from=[input, b]); b: relu(from=a); "
               "f: flatten(from=b); out: linear(in=16, out=2, from=f); }")
        with self.assertRaises(SemanticError) as ctx:
            parse(cyc)
        self.assertEqual(ctx.exception.code, "cycle")
        dup = "network X { input 4x2x2; classes 2; f: flatten(); f: linear(in=16, out=2); }"
        with self.assertRaises(SemanticError) as ctx:
            parse(dup)
        self.assertEqual(ctx.exception.code, "duplicate")

    def test_09_slot_conflict(self):
        src = "network X { input 4x2x2; classes 2; r: relu(from=[input, input]); f: flatten(); out: linear(in=16, out=2); }"
        with self.assertRaises(SemanticError) as ctx:
            parse(src)
        self.assertEqual(ctx.exception.code, "slot-conflict")

    def test_10_sink_class_count(self):
        bad = SMALL.replace("out=2);", "out=3);")
        with self.assertRaises(SemanticError) as ctx:
            parse(bad)
        self.assertEqual(ctx.exception.code, "sink-class-count")
        # structural parse still succeeds
        net = parse(bad, validate=False)
        self.assertFalse(validate_ir(net).ok)

    def test_11_printer_locality(self):
        net = self.alex_net
        changed = net.with_assignments({("c3", "out_channels"): 385})
        a, b = print_net(net).text, print_net(changed).text
        diff = [i for i, (x, y) in enumerate(zip(a, b)) if x != y]
        self.assertEqual(len(a), len(b))
        self.assertEqual(len(diff), 1)
        self.assertEqual(a[diff[0] - 2:diff[0] + 1], "384")

    def test_12_overlong_literal_is_a_syntax_error(self):
        src = ("network X { input 3x8x8; classes 2; fl: flatten(from=input); out: linear(in="
               + "9" * 5000 + ", out=2, from=fl); }")
        with self.assertRaises(NetSyntaxError) as ctx:
            parse(src)
        self.assertEqual(ctx.exception.offset, src.index("9999"))
        with self.assertRaises(NetSyntaxError):
            parse("network X { input " + "3" * 40 + "x8x8; classes 2; }")

    @settings(max_examples=60, deadline=None)
    @given(st.floats(min_value=0, max_value=1, exclude_min=True, exclude_max=True))
    def test_13_dropout_probability_round_trips(self, p):
        src = ("network D { input 3x4x4; classes 2; fl: flatten(from=input); "
               f"d: dropout(p=0.5, from=fl); out: linear(in=48, out=2, from=d); }}")
        net = parse(src)
        net = replace(net, layers=tuple(layer.with_params(p=p) if layer.id == "d" else layer for layer in net.layers))
        printed = print_net(net)
        self.assertNotIn("e-", printed.text)
        self.assertEqual(parse(printed).layer("d").params["p"], p)


class TestEdits(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.src = load_seed("alexnet_cifar")

    def test_01_single_substitution(self):
        ref = self.src.literal_at("c1", "out_channels")
        edited = apply_edits(self.src, [Edit(ref.span, "99")])
        net = parse(edited)
        self.assertEqual(net.layer("c1").params["out_channels"], 99)
        before, after = self.src.text, edited.text
        self.assertEqual(before[:ref.span.start], after[:ref.span.start])
        self.assertEqual(before[ref.span.end:], after[ref.span.end:])

    def test_02_overlap_and_range(self):
        ref = self.src.literal_at("c1", "out_channels")
        with self.assertRaises(OverlapError):
            apply_edits(self.src, [Edit(ref.span, "99"), Edit(ref.span, "98")])
        from src.ir.arch_ir import Span
        with self.assertRaises(SpanOutOfRange):
            apply_edits(self.src, [Edit(Span(len(self.src.data), len(self.src.data) + 2), "7")])
        with self.assertRaises(EditError):
            Edit(ref.span, "0")

    def test_03_offsets_remapped(self):
        ref = self.src.literal_at("c1", "out_channels")
        edited = apply_edits(self.src, [Edit(ref.span, "1000")])
        self.assertEqual(edited.offsets, SourceText.traced(edited.text).offsets)

    def test_04_batch_matches_ir_assignment(self):
        slots = [("c2", "out_channels"), ("c3", "in_channels")]
        edits = [Edit(self.src.literal_at(*slot).span, "77") for slot in slots]
        edited = apply_edits(self.src, edits)
        expected = parse(self.src).with_assignments({slot: 77 for slot in slots})
        self.assertEqual(parse(edited), expected)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 10 ** 6), st.integers(1, 5000)), min_size=1, max_size=12),
           st.randoms(use_true_random=False))
    def test_05_edit_order_does_not_matter(self, picks, rnd):
        offsets = self.src.offsets
        chosen = {}
        for index, value in picks:
            chosen[index % len(offsets)] = str(value)
        edits = [Edit(offsets[i].span, v) for i, v in chosen.items()]
        shuffled = list(edits)
        rnd.shuffle(shuffled)
        first = apply_edits(self.src, edits)
        second = apply_edits(self.src, shuffled)
        self.assertEqual(first.text, second.text)
        self.assertEqual(first.offsets, second.offsets)


if __name__ == '__main__':
    unittest.main(verbosity=2)
