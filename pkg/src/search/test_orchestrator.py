import json
import os
import shutil
import tempfile
import unittest
from pathlib import Path

from pydantic import ValidationError

from database_files.database import ModelRepository
from generator_files.prompt_template import format_candidate
from generator_files.proposers import ProposerConfig
from src.dsl import load_seed
from src.errors import EmptyPopulation
from src.evaluation import SurrogateConfig
from src.ir.arch_ir import Hyperparams
from src.mutation import MutatorConfig
from src.search import SearchConfig, SearchOrchestrator, load_config
from src.stats import analyze
from src.tests.mock_generator import MockGenerator

QUIET_SURROGATE = SurrogateConfig(noise_sigma=0)


def tiny_variant(width):
    return (load_seed("tiny_alex").text
            .replace("out=64, from=fl", f"out={width}, from=fl")
            .replace("linear(in=64, out=10", f"linear(in={width}, out=10"))


class OrchestratorCase(unittest.TestCase):

    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def config(self, name="run", **overrides):
        fields = dict(out_dir=str(self.tmp / name), seed_network="tiny_alex", bootstrap_count=6,
                      candidates_per_epoch=4, epochs=3, surrogate=QUIET_SURROGATE,
                      proposer=ProposerConfig(mutator=MutatorConfig(width_max=256)))
        fields.update(overrides)
        return SearchConfig(**fields)

    def brute_force_best(self, repo, epoch):
        scores = [r.accuracy for r in repo.records() if r.valid and r.epoch <= epoch]
        return max(scores) if scores else None


class TestSearchConfig(OrchestratorCase):

    def test_01_defaults_and_ranges(self):
        cfg = SearchConfig()
        self.assertEqual((cfg.epochs, cfg.candidates_per_epoch, cfg.delta, cfg.bootstrap_count), (22, 10, 0.02, 100))
        for bad in ({"epochs": 0}, {"candidates_per_epoch": 0}, {"delta": 0}, {"ablate": ["colour"]}):
            with self.assertRaises(ValidationError):
                SearchConfig(**bad)

    def test_02_load_config_with_overrides(self):
        path = self.tmp / "search.json"
        path.write_text(json.dumps({"epochs": 5, "delta": 0.05, "policy": "topk", "top_k": 3}))
        cfg = load_config(path, epochs=7, rng_seed=None)
        self.assertEqual((cfg.epochs, cfg.delta, cfg.policy, cfg.top_k, cfg.rng_seed), (7, 0.05, "topk", 3, 0))


class TestBootstrapPhase(OrchestratorCase):

    def test_01_population_at_epoch_zero(self):
        with SearchOrchestrator(self.config()) as orch:
            summary = orch.run_bootstrap(load_seed("tiny_alex"))
            records = orch.repo.records()
        self.assertEqual((summary.attempted, summary.valid_count, summary.phase), (6, 6, "bootstrap"))
        self.assertEqual(len(records), 6)
        self.assertTrue(all(r.valid and r.epoch == 0 and r.proposer_kind == "bootstrap" for r in records))
        self.assertEqual(summary.best_so_far, max(r.accuracy for r in records))

    def test_02_empty_population(self):
        with SearchOrchestrator(self.config(bootstrap_count=0)) as orch:
            with self.assertRaises(EmptyPopulation):
                orch.run_bootstrap(load_seed("tiny_alex"))
            with self.assertRaises(EmptyPopulation):
                orch.run_epoch(1)

    def test_03_deterministic(self):
        contents = []
        for name in ("a", "b"):
            with SearchOrchestrator(self.config(name)) as orch:
                orch.run_bootstrap(load_seed("tiny_alex"))
                contents.append([(r.id, r.accuracy, r.params) for r in orch.repo.records()])
        self.assertEqual(contents[0], contents[1])


class TestEpoch(OrchestratorCase):

    def test_01_random_mutation_epoch(self):
        with SearchOrchestrator(self.config()) as orch:
            orch.run_bootstrap(load_seed("tiny_alex"))
            summary = orch.run_epoch(1)
            self.assertEqual(summary.attempted, 4)
            self.assertEqual(summary.best_so_far, self.brute_force_best(orch.repo, 1))
            generated = orch.repo.epoch_records(1)
            self.assertTrue(all(r.proposer_kind == "random" and r.parent_id in orch.repo for r in generated))

    def test_02_external_nine_of_ten(self):
        answers = [format_candidate(tiny_variant(w), Hyperparams()) for w in range(100, 109)]
        answers.append("I cannot help with that network.")
        with MockGenerator(answers) as server:
            cfg = self.config(candidates_per_epoch=10,
                              proposer=ProposerConfig(kind="external", endpoint=server.url, timeout=10))
            with SearchOrchestrator(cfg) as orch:
                orch.run_bootstrap(load_seed("tiny_alex"))
                summary = orch.run_epoch(1)
                invalid = [r for r in orch.repo.epoch_records(1) if not r.valid]
        self.assertEqual((summary.attempted, summary.valid_count), (10, 9))
        self.assertEqual(len(server.requests), 10)
        self.assertEqual(len(invalid), 1)
        self.assertIsNone(invalid[0].accuracy)
        self.assertEqual(invalid[0].verdict, "Invalid(stage 1, parse: no <nn> block)")

    def test_03_zero_valid_carries_best_forward(self):
        transcript = self.tmp / "transcript.jsonl"
        transcript.write_text("".join(json.dumps({"text": f"prose {i}"}) + "\n" for i in range(4)))
        cfg = self.config(proposer=ProposerConfig(kind="replay", replay_path=str(transcript)))
        with SearchOrchestrator(cfg) as orch:
            before = orch.run_bootstrap(load_seed("tiny_alex"))
            summary = orch.run_epoch(1)
        self.assertEqual((summary.attempted, summary.valid_count), (4, 0))
        self.assertIsNone(summary.max_accuracy)
        self.assertEqual(summary.best_so_far, before.best_so_far)

    def test_04_proposer_failures_do_not_abort(self):
        transcript = self.tmp / "short.jsonl"
        transcript.write_text(json.dumps({"text": format_candidate(tiny_variant(200), Hyperparams())}) + "\n")
        cfg = self.config(proposer=ProposerConfig(kind="replay", replay_path=str(transcript)))
        with SearchOrchestrator(cfg) as orch:
            orch.run_bootstrap(load_seed("tiny_alex"))
            with self.assertLogs("src.search.orchestrator", level="WARNING"):
                summary = orch.run_epoch(1)
        self.assertEqual((summary.attempted, summary.valid_count, summary.proposer_failures), (4, 1, 3))

    def test_05_unreachable_generator(self):
        with MockGenerator(["never"], fail_first=100) as server:
            cfg = self.config(proposer=ProposerConfig(kind="external", endpoint=server.url, timeout=5))
            with SearchOrchestrator(cfg) as orch:
                orch.run_bootstrap(load_seed("tiny_alex"))
                orch.proposer.sleep = lambda seconds: None
                with self.assertLogs("src.search.orchestrator", level="WARNING"):
                    summary = orch.run_epoch(1)
        self.assertEqual((summary.attempted, summary.valid_count, summary.proposer_failures), (4, 0, 4))

    def test_06_corpus_export(self):
        with SearchOrchestrator(self.config()) as orch:
            orch.run_bootstrap(load_seed("tiny_alex"))
            orch.run_epoch(1)
            path = orch.out_dir / "corpus" / "epoch_01.jsonl"
            expected = len(orch.repo.extract_pairs(max_pairs=1000, rng_seed=1))
        lines = path.read_text().splitlines()
        self.assertEqual(len(lines), expected)
        first = json.loads(lines[0])
        self.assertIn("<nn>", first["prompt"])
        self.assertTrue(first["completion"].startswith("<nn>\n"))

    def test_07_repeated_answers_are_stored_once(self):
        transcript = self.tmp / "repeat.jsonl"
        answer = format_candidate(tiny_variant(120), Hyperparams())
        transcript.write_text((json.dumps({"text": answer}) + "\n") * 4)
        cfg = self.config(proposer=ProposerConfig(kind="replay", replay_path=str(transcript)))
        with SearchOrchestrator(cfg) as orch:
            orch.run_bootstrap(load_seed("tiny_alex"))
            summary = orch.run_epoch(1)
            stored = orch.repo.epoch_records(1)
        self.assertEqual((summary.attempted, summary.valid_count, summary.duplicates), (4, 1, 3))
        self.assertEqual(summary.valid_count, sum(r.valid for r in stored))
        self.assertEqual(len(stored), 1)


class TestRunSearch(OrchestratorCase):

    def test_01_single_epoch_is_bootstrap_only(self):
        cfg = self.config(epochs=1, bootstrap_epoch_generates=False)
        with SearchOrchestrator(cfg) as orch:
            summaries, _ = orch.run_search(load_seed("tiny_alex"), analyze_at_end=False)
        self.assertEqual([(s.epoch, s.phase) for s in summaries], [(0, "bootstrap")])

    def test_02_accounting_and_best_so_far(self):
        cfg = self.config(epochs=4)
        with SearchOrchestrator(cfg) as orch:
            summaries, paths = orch.run_search(load_seed("tiny_alex"))
            generated = [s for s in summaries if s.phase == "generate"]
            self.assertEqual([s.epoch for s in generated], [0, 1, 2, 3])
            self.assertEqual(sum(s.attempted for s in generated), 4 * 4)
            best = [s.best_so_far for s in generated]
            self.assertEqual(best, sorted(best))
            for s in generated:
                self.assertEqual(s.best_so_far, self.brute_force_best(orch.repo, s.epoch))
        manifest = json.loads((Path(cfg.out_dir) / "manifest.json").read_text())
        self.assertEqual(manifest["config"]["epochs"], 4)
        self.assertEqual(manifest["evaluator_kind"], "surrogate")
        self.assertIn("report.json", {p.name for p in paths})

    def test_03_resume_matches_uninterrupted_run(self):
        with SearchOrchestrator(self.config("whole", epochs=4)) as orch:
            orch.run_search(load_seed("tiny_alex"), analyze_at_end=False)
            whole = [r.id for r in orch.repo.records()]

        with SearchOrchestrator(self.config("split", epochs=2)) as orch:
            orch.run_search(load_seed("tiny_alex"), analyze_at_end=False)
        with SearchOrchestrator(self.config("split", epochs=4)) as orch:
            with self.assertLogs("src.search.orchestrator", level="INFO") as logs:
                summaries, _ = orch.run_search(load_seed("tiny_alex"), analyze_at_end=False)
            resumed = [r.id for r in orch.repo.records()]
        self.assertTrue(any("resuming" in line and "epoch 2" in line for line in logs.output))
        self.assertEqual([(s.epoch, s.phase) for s in summaries],
                         [(0, "bootstrap"), (0, "generate"), (1, "generate"), (2, "generate"), (3, "generate")])
        self.assertEqual(resumed, whole)

    def test_04_end_to_end_determinism(self):
        runs = []
        for name in ("first", "second"):
            with SearchOrchestrator(self.config(name, epochs=3)) as orch:
                orch.run_search(load_seed("tiny_alex"), analyze_at_end=False)
                runs.append([(r.id, r.epoch, r.accuracy, r.verdict, r.parent_id) for r in orch.repo.records()])
        self.assertEqual(runs[0], runs[1])

    def test_05_surrogate_recovery(self):
        """Noise-free surrogate optimum is 0.25; top-k random mutation should get within 0.02"""
        reached = 0
        for seed in range(10):
            cfg = self.config(f"seed{seed}", rng_seed=seed, epochs=12, candidates_per_epoch=5, bootstrap_count=10,
                              policy="topk", top_k=3, proposer=ProposerConfig(mutator=MutatorConfig()))
            with SearchOrchestrator(cfg) as orch:
                summaries, _ = orch.run_search(load_seed("tiny_alex"), analyze_at_end=False)
            final = summaries[-1].best_so_far
            self.assertLessEqual(final, 0.25 + 1e-12)
            reached += final >= 0.23
        self.assertGreaterEqual(reached, 9)

    @unittest.skipUnless(os.getenv("CHANNEL_FORGE_SLOW"), "set CHANNEL_FORGE_SLOW=1 for the full-length search")
    def test_06_full_length_search(self):
        cfg = self.config("full", seed_network="alexnet_cifar", epochs=22, candidates_per_epoch=10,
                          bootstrap_count=100, proposer=ProposerConfig(mutator=MutatorConfig()))
        with SearchOrchestrator(cfg) as orch:
            summaries, paths = orch.run_search(load_seed("alexnet_cifar"))
        generated = [s for s in summaries if s.phase == "generate"]
        self.assertEqual(sum(s.attempted for s in generated), 220)
        self.assertEqual(len(paths), 5)

    @unittest.skipUnless(os.getenv("CHANNEL_FORGE_SLOW"), "set CHANNEL_FORGE_SLOW=1 for the ten-seed trend check")
    def test_07_late_epochs_beat_early_ones(self):
        """Noise-free top-k random mutation, 20 epochs x 10 candidates: late mean exceeds early mean"""
        significant = reached = 0
        for seed in range(10):
            cfg = self.config(f"trend{seed}", rng_seed=seed, epochs=20, candidates_per_epoch=10,
                              bootstrap_count=20, policy="topk", top_k=3,
                              proposer=ProposerConfig(mutator=MutatorConfig()))
            with SearchOrchestrator(cfg) as orch:
                summaries, _ = orch.run_search(load_seed("tiny_alex"), analyze_at_end=False)
            reached += summaries[-1].best_so_far >= 0.23
            report = analyze(cfg.out_dir, early=(0, 5), late=(16, 19), n_perm=10_000)
            t_test = report.trajectory.t_test
            significant += t_test is not None and t_test.p < 0.05
        self.assertGreaterEqual(reached, 9)
        self.assertGreaterEqual(significant, 8)


if __name__ == '__main__':
    unittest.main(verbosity=2)
