"""Acceptance gate: one test per published criterion, at stated tolerances.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
pass/fail lines. Criteria 6 and the real-data parts of 7 need the Planetoid
files (``<name>.content`` / ``<name>.cites``); point FEDVGCN_DATA at the
directory holding them, or place them under ./data. Without the files those
tests skip loudly and the synthetic-data proxies still run. Set
FEDVGCN_FULL_ACCEPTANCE=1 to include the multi-hour federated Cora band.
"""

import math
import os
import random
import time

import numpy as np
import pytest

from fedvgcn import gnn, graph
from fedvgcn.codec import FixedPointCodec
from fedvgcn.gnn import (
    engine_backward,
    engine_forward,
    glorot_init,
    make_party_blocks,
    sgd_step,
    softmax_xent_batch,
)
from fedvgcn.graph import TABLE1_STATS, load_dataset_dir, make_synthetic_dataset, split_vertical
from fedvgcn.harness import ExperimentConfig, run
from fedvgcn.paillier import add_ct, decrypt, encrypt, keygen, mul_scalar_signed
from fedvgcn.polyact import Interval, QuadActivation, least_squares_fit, relu
from fedvgcn.protocol import FederatedConfig, session_setup
from fedvgcn.protocol.parties import epoch_dropout_masks

DATA_DIR = os.environ.get("FEDVGCN_DATA", os.path.join(os.path.dirname(__file__), "..", "data"))
FULL = os.environ.get("FEDVGCN_FULL_ACCEPTANCE", "") == "1"

SKIP_DATA_MSG = (
    "Planetoid files not found under {d!r}. Place cora/citeseer/pubmed "
    "*.content/*.cites there (LINQS distribution) or set FEDVGCN_DATA. "
    "This environment has no network access, so the files cannot be fetched "
    "automatically; the synthetic proxies below exercise the same code paths."
)


def _datasets_present():
    names = []
    for name in ("cora", "citeseer", "pubmed"):
        content = os.path.join(DATA_DIR, f"{name}.content")
        cites = os.path.join(DATA_DIR, f"{name}.cites")
        if os.path.exists(content) and os.path.exists(cites):
            names.append(name)
    return names


def report(criterion: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] {criterion}" + (f" — {detail}" if detail else ""))
    assert ok, f"{criterion}: {detail}"


class TestCriterion1CryptoCorrectness:
    def test_roundtrips_and_homomorphic_identities(self):
        started = time.time()
        for bits, seed in ((512, 7), (1024, 13)):
            pk, sk = keygen(bits, random.Random(seed), test_mode=True)
            codec = FixedPointCodec(pk.n)
            rng = random.Random(seed + 1)
            for _ in range(1000):
                m = rng.randrange(pk.n)
                assert decrypt(sk, encrypt(pk, m, rng)) == m
            res = codec.resolution
            for _ in range(1000):
                a = round(rng.uniform(-1e3, 1e3) / res) * res
                b = round(rng.uniform(-1e3, 1e3) / res) * res
                ct = add_ct(
                    encrypt(pk, codec.encode(a), rng), encrypt(pk, codec.encode(b), rng)
                )
                assert codec.decode(decrypt(sk, ct)) == a + b
            for _ in range(1000):
                a = rng.uniform(-1.0, 1.0)
                s = rng.uniform(-1.0, 1.0)
                ct = mul_scalar_signed(
                    encrypt(pk, codec.encode(a), rng),
                    codec.to_signed(codec.encode(s)),
                )
                got = codec.decode(codec.rescale_after_product(decrypt(sk, ct)))
                assert abs(got - a * s) <= 2 * res, (a, s)
        elapsed = time.time() - started
        report(
            "criterion 1: crypto correctness (1000x roundtrip/add/mul at 512 and 1024 bits)",
            elapsed < 60.0,
            f"{elapsed:.1f}s (< 60s budget)",
        )


class TestCriterion2LeastSquares:
    def test_degree2_relu_fit_and_literal_activation(self):
        iv = Interval(-1.0, 1.0)
        fit = least_squares_fit(relu, 2, iv)
        expected = (3 / 32, 0.5, 15 / 32)
        ok_fit = np.allclose(fit.coeffs, expected, atol=1e-6)

        # independent dense-grid normal-equations oracle
        xs = np.linspace(-1, 1, 20001)
        V = np.vander(xs, 3, increasing=True)
        w = np.full(xs.size, 2.0 / (xs.size - 1))
        w[0] *= 0.5
        w[-1] *= 0.5
        oracle = np.linalg.solve(V.T @ (w[:, None] * V), V.T @ (w * relu(xs)))
        ok_oracle = np.allclose(fit.coeffs, oracle, atol=1e-6)

        # the literal quadratic activation is used verbatim...
        q = QuadActivation(1.0).coeffs().coeffs
        ok_literal = (
            q[2] == pytest.approx(4 / (3 * math.pi), abs=1e-15)
            and q[1] == 0.5
            and q[0] == pytest.approx(1 / (2 * math.pi), abs=1e-15)
        )
        # ...and genuinely differs from the L2 fit (documented gap, not equality)
        ok_gap = abs(q[2] - fit.coeffs[2]) > 1e-3 and abs(q[0] - fit.coeffs[0]) > 1e-3
        report(
            "criterion 2: least-squares machinery vs literal activation coefficients",
            ok_fit and ok_oracle and ok_literal and ok_gap,
            f"fit={tuple(round(c, 7) for c in fit.coeffs)}",
        )


class TestCriterion3GradientFidelity:
    def test_twenty_random_tiny_models(self):
        worst = 0.0
        for trial in range(20):
            rng = np.random.default_rng(1000 + trial)
            n = int(rng.integers(3, 9))
            d0, d1 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            classes = int(rng.integers(2, 4))
            layers = [
                gnn.SageLayer(rng.normal(0, 0.5, size=d), rng.normal(0, 0.5, size=d))
                for d in [(d0, d1), (d1, d1), (d1, classes)]
            ]
            model = gnn.SageModel(
                layers, QuadActivation(float(rng.uniform(0.5, 2.0))), 0.0, 0.01
            )
            x = rng.normal(0, 0.7, size=(n, d0))
            labels = rng.integers(0, classes, size=n)
            edges = [
                (i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4
            ]
            idx = np.arange(n)
            _, grads = gnn.backward(model, x, edges, labels, idx)
            h = 1e-5
            for l, layer in enumerate(model.layers):
                for k, name in enumerate(("w_self", "w_neigh")):
                    w = getattr(layer, name)
                    g = grads[l][k]
                    for i in range(w.shape[0]):
                        for j in range(w.shape[1]):
                            orig = w[i, j]
                            w[i, j] = orig + h
                            blocks = gnn.make_vanilla_blocks(model, edges, n)
                            lp, _ = softmax_xent_batch(
                                engine_forward(model, x, blocks).logits, labels, idx
                            )
                            w[i, j] = orig - h
                            lm, _ = softmax_xent_batch(
                                engine_forward(model, x, blocks).logits, labels, idx
                            )
                            w[i, j] = orig
                            fd = (lp - lm) / (2 * h)
                            rel = abs(g[i, j] - fd) / max(abs(fd), abs(g[i, j]), 1e-4)
                            worst = max(worst, rel)
        report(
            "criterion 3: analytic gradients vs central finite differences (20 models)",
            worst < 1e-4,
            f"worst relative error {worst:.2e} (< 1e-4)",
        )


class TestCriterion4ProtocolEquivalence:
    def test_five_random_graphs(self):
        started = time.time()
        worst = 0.0
        for trial in range(5):
            rng = np.random.default_rng(50 + trial)
            n = int(rng.integers(6, 11))
            n_feat = int(rng.integers(4, 9))
            classes = int(rng.integers(2, 4))
            hidden = int(rng.integers(2, 5))
            dropout = 0.5 if trial % 2 == 0 else 0.0
            ds = make_synthetic_dataset(
                n_nodes=n, n_features=n_feat, n_classes=classes, seed=60 + trial
            )
            va, vb = split_vertical(ds, 0.5, 0.5, seed=trial)
            model = glorot_init(
                n_feat, classes, QuadActivation(1.0), seed=trial, hidden=hidden,
                dropout_rate=dropout, learning_rate=0.05,
            )
            cfg = FederatedConfig(
                key_bits=512, frac_bits=32, seed=500 + trial, activation=1.0,
                hidden=hidden, dropout_rate=dropout, learning_rate=0.05,
            )
            sess = session_setup(va, vb, cfg, model=model.copy())
            train_idx = np.arange(n)
            sess.run_iteration(train_idx)
            # plaintext combined-data iteration: identical math, no crypto
            ref = model.copy()
            blocks = make_party_blocks(ref, va.features.shape[1], va.edges, vb.edges, n)
            masks = (
                epoch_dropout_masks(cfg.seed * 7 + 1, 0, n, [hidden, hidden], dropout)
                if dropout
                else None
            )
            cache = engine_forward(ref, np.hstack([va.features, vb.features]), blocks, masks)
            _, delta = softmax_xent_batch(cache.logits, ds.labels, train_idx)
            sgd_step(ref, engine_backward(ref, cache, delta, blocks, masks))
            fed = sess.assembled_weights()
            for la, lb in zip(fed.layers, ref.layers):
                worst = max(
                    worst,
                    np.abs(la.w_self - lb.w_self).max(),
                    np.abs(la.w_neigh - lb.w_neigh).max(),
                )
        elapsed = time.time() - started
        report(
            "criterion 4: one federated iteration equals the plaintext iteration",
            worst < 1e-4 and elapsed < 300.0,
            f"worst elementwise gap {worst:.2e} (< 1e-4), {elapsed:.0f}s (< 300s)",
        )


class TestCriterion5CommunicationFormulas:
    def test_counter_formulas_on_m4_session(self):
        from fedvgcn.graph import VerticalView

        m = 4
        ids = ("n0",)
        va = VerticalView("A", ids, np.array([[1.0, 0.0]]), np.array([0, 1]), ())
        vb = VerticalView(
            "B", ids, np.array([[0.0, 1.0]]), np.array([2, 3]), (),
            labels=np.array([1]), num_classes=m,
        )
        model = glorot_init(4, m, QuadActivation(1.0), seed=0, hidden=m,
                            dropout_rate=0.0, learning_rate=0.01)
        sess = session_setup(
            va, vb,
            FederatedConfig(seed=1, activation=1.0, hidden=m, dropout_rate=0.0, learning_rate=0.01),
            model=model,
        )
        sess.run_iteration(np.array([0]))
        counters = sess.counters
        n_layers = 3
        forward_ok = counters.messages_forward == 2 * m * (n_layers - 1)
        pair_bound = 7 * (m * m + m + 1)
        backward_ok = all(c <= pair_bound for c in counters.backward_by_layer.values())
        total_ok = counters.total_units() <= 10 * n_layers * m * m
        report(
            "criterion 5: communication formulas (2m(n-1) exact, backward/total bounds)",
            forward_ok and backward_ok and total_ok,
            f"forward={counters.messages_forward} (=16), "
            f"backward_by_layer={dict(counters.backward_by_layer)} (<= {pair_bound}), "
            f"total={counters.total_units()} (<= {10 * n_layers * m * m})",
        )


class TestCriterion6Table1:
    def test_loader_statistics_match_reference(self):
        present = _datasets_present()
        if len(present) < 3:
            missing = sorted(set(TABLE1_STATS) - set(present))
            pytest.skip(SKIP_DATA_MSG.format(d=os.path.abspath(DATA_DIR)) + f" Missing: {missing}")
        details = []
        for name in ("cora", "pubmed", "citeseer"):
            ds = load_dataset_dir(DATA_DIR, name)
            graph.verify_statistics(ds, name)  # raises with a delta report on drift
            details.append(f"{name}={ds.stats()}")
        report("criterion 6: Table-1 statistics exact", True, "; ".join(details))

    def test_drift_is_loud_not_silent(self, tmp_path):
        # loader machinery check that always runs: a wrong "cora" must fail
        # with a reported delta rather than pass quietly
        ds = make_synthetic_dataset(n_nodes=12, n_features=5, seed=0)
        graph.write_planetoid(ds, str(tmp_path), "cora")
        loaded = load_dataset_dir(str(tmp_path), "cora")
        with pytest.raises(graph.StatisticsMismatchError) as err:
            graph.verify_statistics(loaded, "cora")
        ok = "2708" in str(err.value) and "got 12" in str(err.value)
        report("criterion 6 (mechanism): statistics drift fails loudly", ok, str(err.value)[:80])


@pytest.fixture(scope="module")
def synth_proxy_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("proxy")
    ds = make_synthetic_dataset(
        n_nodes=90, n_features=24, n_classes=3, seed=5,
        intra_p=0.05, inter_p=0.02, feature_on=0.7, feature_off=0.02,
    )
    graph.write_planetoid(ds, str(d), "synth")
    return str(d)


class TestCriterion7Table2:
    def _proxy_config(self, synth_proxy_dir, setting):
        return ExperimentConfig(
            dataset_dir=synth_proxy_dir, name="synth", setting=setting,
            epochs=50, seed=3, learning_rate=4e-3, dropout=0.5, hidden=8,
            parallel_folds=min(5, os.cpu_count() or 1),
        )

    def test_ordering_property_synthetic_proxy(self, synth_proxy_dir):
        """Always-run proxy: the full stack (loader, split, folds, protocol)
        must show federated >= max(isolated) and combined - federated <= 0.05
        on a clustered synthetic graph."""
        acc = {
            s: run(self._proxy_config(synth_proxy_dir, s)).mean_accuracy
            for s in ("isolated_a", "isolated_b", "federated", "combined")
        }
        ordering = acc["federated"] >= max(acc["isolated_a"], acc["isolated_b"])
        gap = acc["combined"] - acc["federated"] <= 0.05
        report(
            "criterion 7 (proxy): ordering properties through the real protocol",
            ordering and gap,
            f"iso_a={acc['isolated_a']:.3f} iso_b={acc['isolated_b']:.3f} "
            f"fed={acc['federated']:.3f} comb={acc['combined']:.3f}",
        )

    def test_federated_runtime_projection(self):
        """Measure federated epochs at two node counts at Cora feature width
        and project the 30-epoch five-fold run affinely (the layer-0 gradient
        matrices are fixed-size, so cost is fixed + per-node)."""
        times = {}
        for n_nodes in (150, 400):
            ds = make_synthetic_dataset(
                n_nodes=n_nodes, n_features=1433, n_classes=7, seed=0,
                target_edges=2 * n_nodes, feature_on=0.25, feature_off=0.02,
            )
            va, vb = split_vertical(ds, 0.5, 0.5, seed=1)
            folds = graph.five_fold(ds, seed=2)
            sess = session_setup(va, vb, FederatedConfig(seed=3, activation="auto"))
            started = time.time()
            sess.run_iteration(folds[0].train_ids)
            times[n_nodes] = time.time() - started
        slope = (times[400] - times[150]) / (400 - 150)
        intercept = times[150] - slope * 150
        cora_epoch = intercept + slope * 2708
        # five folds run as parallel processes; wall time is one fold's epochs
        wall_hours = cora_epoch * 30 / 3600
        report(
            "criterion 7 (runtime): federated Cora 30-epoch projection",
            wall_hours < 2.0,
            f"epoch(150)={times[150]:.1f}s epoch(400)={times[400]:.1f}s -> "
            f"epoch(2708)~{cora_epoch:.0f}s, 30-epoch wall ~{wall_hours:.2f}h (< 2h, "
            f"folds in parallel)",
        )

    def test_real_data_accuracy_bands(self):
        present = _datasets_present()
        if "cora" not in present:
            pytest.skip(SKIP_DATA_MSG.format(d=os.path.abspath(DATA_DIR)))
        combined = run(
            ExperimentConfig(
                dataset_dir=DATA_DIR, name="cora", setting="combined",
                epochs=100, seed=0,
            )
        ).mean_accuracy
        ok_combined = 0.66 <= combined <= 0.76
        detail = f"combined-Cora={combined:.4f} in [0.66, 0.76]"
        if not FULL:
            report("criterion 7 (real data, plaintext bands)", ok_combined, detail)
            pytest.skip(
                "federated Cora band is hours-scale; set FEDVGCN_FULL_ACCEPTANCE=1 "
                "to run it plus the three-dataset ordering checks"
            )
        federated = run(
            ExperimentConfig(
                dataset_dir=DATA_DIR, name="cora", setting="federated",
                epochs=30, seed=0,
            )
        ).mean_accuracy
        ok_fed = 0.62 <= federated <= 0.73
        iso = [
            run(
                ExperimentConfig(
                    dataset_dir=DATA_DIR, name="cora", setting=s, epochs=100, seed=0
                )
            ).mean_accuracy
            for s in ("isolated_a", "isolated_b")
        ]
        ok_order = federated >= max(iso) and combined - federated <= 0.05
        report(
            "criterion 7 (real data): Cora bands and ordering",
            ok_combined and ok_fed and ok_order,
            f"{detail}, federated={federated:.4f} in [0.62, 0.73], iso={iso}",
        )


class TestCriterion8Determinism:
    def test_repeated_runs_bit_identical(self, synth_proxy_dir):
        cfg = dict(
            dataset_dir=synth_proxy_dir, name="synth", setting="federated",
            epochs=3, seed=9, learning_rate=1e-3, dropout=0.5, hidden=4,
            parallel_folds=1,
        )
        r1 = run(ExperimentConfig(**cfg))
        r2 = run(ExperimentConfig(**cfg))
        records_ok = (
            r1.fold_accuracies == r2.fold_accuracies and r1.final_losses == r2.final_losses
        )
        # transcript-level determinism on the in-process transport
        ds = make_synthetic_dataset(n_nodes=8, n_features=6, seed=2)
        va, vb = split_vertical(ds, 0.5, 0.5, seed=1)

        def transcript():
            sess = session_setup(
                va, vb,
                FederatedConfig(seed=77, activation=1.0, hidden=3, learning_rate=0.01),
            )
            for _ in range(3):
                sess.run_iteration(np.arange(8))
            return sess.transcript_digest(), sess.evaluate(np.arange(8))

        d1, a1 = transcript()
        d2, a2 = transcript()
        report(
            "criterion 8: determinism (records and transcripts bit-identical)",
            records_ok and d1 == d2 and a1 == a2,
            f"transcript={d1[:16]}..., accuracies match",
        )
