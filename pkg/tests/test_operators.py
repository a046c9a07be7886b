import random
from fractions import Fraction

import numpy as np
import pytest

from rankone.errors import BudgetExceeded, FitDiverged, StageMismatch
from rankone.operators import (
    CorrelationMatrix,
    adjoint,
    compose,
    dictionary,
    identity_matrix,
    markov_matrix,
    nnls_decompose,
    theta_matrix,
    weak_limit_scan,
)


def make_matrix(stage, entries):
    h = entries.shape[0]
    one = Fraction(1)
    residual = tuple(
        max(Fraction(0), one - sum(entries[:, b])) for b in range(h)
    )
    return CorrelationMatrix(stage, None, entries, residual, Fraction(0))


class TestMarkovMatrix:
    def test_identity_at_time_zero(self, chacon):
        M = markov_matrix(chacon, 2, 0, K=7)
        I = identity_matrix(chacon, 2)
        assert (M.entries == I.entries).all()
        assert all(r == 0 for r in M.residual)

    def test_column_substochastic(self, chacon, katok):
        for c, j, n, K in ((chacon, 2, 7, 7), (katok, 1, 5, 2), (chacon, 1, -3, 6)):
            M = markov_matrix(c, j, n, K=K)
            for b in range(M.size):
                col = sum(M.entries[:, b]) + M.residual[b]
                assert col <= 1
                assert col >= 1 - M.error_bound

    def test_odometer_rigid_at_height(self, odometer):
        j = 3
        M = markov_matrix(odometer, j, odometer.heights[j], K=12)
        I = identity_matrix(odometer, j)
        gap = np.abs(M.as_float() - I.as_float()).max()
        assert gap <= float(M.error_bound)

    def test_entry_budget(self, odometer):
        with pytest.raises(BudgetExceeded):
            markov_matrix(odometer, 12, 0, entry_budget=100)

    def test_theta_profile(self, chacon):
        th = theta_matrix(chacon, 2)
        assert th.entries[0, 0] == Fraction(1, 13)
        assert all(sum(th.entries[:, b]) == 1 for b in range(13))


class TestDictionary:
    def test_members_and_order(self, odometer):
        mem = dictionary(odometer, 2, Z=1, K=8)
        assert [label for label, _ in mem] == ["I", "Theta", "T^-1", "T^0", "T^1"]

    def test_all_members_substochastic(self, chacon):
        for label, M in dictionary(chacon, 2, Z=2, K=7):
            for b in range(M.size):
                assert sum(M.entries[:, b]) + M.residual[b] <= 1


class TestFitter:
    def test_exact_identity(self, odometer):
        mem = dictionary(odometer, 2, Z=1, K=8)
        rep = nnls_decompose(identity_matrix(odometer, 2), mem)
        assert rep.residual_norm <= 1e-9
        assert rep.total_weight <= 1 + 1e-9

    def test_exact_theta(self, odometer):
        mem = dictionary(odometer, 2, Z=1, K=8)
        rep = nnls_decompose(theta_matrix(odometer, 2), mem)
        assert rep.residual_norm <= 1e-9
        assert abs(rep.theta_coefficient - 1.0) < 1e-9

    def test_half_identity_half_theta(self, odometer):
        I = identity_matrix(odometer, 2)
        th = theta_matrix(odometer, 2)
        target = make_matrix(2, (I.entries + th.entries) * Fraction(1, 2))
        rep = nnls_decompose(target, dictionary(odometer, 2, Z=1, K=8))
        assert abs(rep.identity_coefficient - 0.5) < 1e-6
        assert abs(rep.theta_coefficient - 0.5) < 1e-6
        assert rep.residual_norm <= 1e-6

    def test_random_convex_combinations_recovered(self, chacon):
        rng = random.Random(4242)
        mem = dictionary(chacon, 1, Z=2, K=6)
        mats = [m.entries for _, m in mem]
        for _ in range(40):
            weights = [Fraction(rng.randint(0, 8)) for _ in mats]
            total = sum(weights)
            if total == 0:
                continue
            weights = [w / total for w in weights]
            target = sum((w * m for w, m in zip(weights, mats)), start=np.zeros_like(mats[0]))
            rep = nnls_decompose(make_matrix(1, target), mem)
            assert rep.residual_norm <= 1e-9
            assert rep.total_weight <= 1 + 1e-9

    def test_fit_stability_lipschitz(self, chacon):
        rng = random.Random(7)
        mem = dictionary(chacon, 1, Z=1, K=6)
        base = markov_matrix(chacon, 1, 2, K=6)
        rep0 = nnls_decompose(base, mem)
        h = base.size
        for _ in range(10):
            delta = Fraction(rng.randint(1, 50), 10**5)
            bump = np.empty((h, h), dtype=object)
            for a in range(h):
                for b in range(h):
                    sign = 1 if rng.random() < 0.5 else -1
                    bump[a, b] = base.entries[a, b] + sign * delta
                    if bump[a, b] < 0:
                        bump[a, b] = Fraction(0)
            rep1 = nnls_decompose(CorrelationMatrix(1, 2, bump, base.residual, base.error_bound), mem)
            assert abs(rep1.residual_norm - rep0.residual_norm) <= h * float(delta) + 1e-9

    def test_iteration_cap(self, odometer):
        mem = dictionary(odometer, 2, Z=1, K=8)
        with pytest.raises(FitDiverged):
            nnls_decompose(theta_matrix(odometer, 2), mem, cap=0)

    def test_total_weight_face_enforced(self, odometer):
        # a target outside the weight-one cone lands on its face
        I = identity_matrix(odometer, 2)
        target = make_matrix(2, I.entries * Fraction(3, 2))
        rep = nnls_decompose(target, dictionary(odometer, 2, Z=0, K=8))
        assert rep.total_weight <= 1 + 1e-9
        assert rep.identity_coefficient + rep.coefficient("T^0") >= 1 - 1e-6
        # residual is the distance from 3/2 I to the face
        assert abs(rep.residual_norm - 0.5 * float(np.sqrt(4))) < 1e-6

    def test_empty_dictionary_rejected(self, odometer):
        with pytest.raises(StageMismatch):
            nnls_decompose(identity_matrix(odometer, 2), [])

    def test_stage_mismatch(self, odometer):
        mem = dictionary(odometer, 2, Z=0, K=8)
        with pytest.raises(StageMismatch):
            nnls_decompose(identity_matrix(odometer, 3), mem)


class TestRigidityDetector:
    def test_unitary_convergence_bound(self, odometer):
        # if P is near I then P*P is near I with constant 2h
        rng = random.Random(99)
        j = 3
        h = odometer.heights[j]
        I = identity_matrix(odometer, j)
        for _ in range(50):
            scale = Fraction(rng.randint(1, 100), 10**4)
            P = np.empty((h, h), dtype=object)
            for a in range(h):
                for b in range(h):
                    wobble = Fraction(rng.randint(0, 100), 100) * scale
                    P[a, b] = (Fraction(1) if a == b else Fraction(0)) + wobble
            # renormalize columns to keep substochasticity
            for b in range(h):
                s = sum(P[:, b])
                if s > 1:
                    for a in range(h):
                        P[a, b] /= s
            Pm = make_matrix(j, P)
            PtP = compose(adjoint(Pm), Pm)
            dist_p = max(abs(P[a, b] - I.entries[a, b]) for a in range(h) for b in range(h))
            dist_ptp = max(
                abs(PtP.entries[a, b] - I.entries[a, b]) for a in range(h) for b in range(h)
            )
            assert dist_ptp <= 2 * h * dist_p


class TestAdjointCompose:
    def test_adjoint_identity(self, odometer):
        I = identity_matrix(odometer, 2)
        assert (adjoint(I).entries == I.entries).all()

    def test_compose_identity(self, chacon):
        M = markov_matrix(chacon, 1, 3, K=6)
        I = identity_matrix(chacon, 1)
        assert (compose(I, M).entries == M.entries).all()
        assert (compose(M, I).entries == M.entries).all()

    def test_projection_idempotent(self, chacon):
        th = theta_matrix(chacon, 1)
        assert (compose(adjoint(th), th).entries == th.entries).all()

    def test_permutation_unitarity(self, odometer):
        j = 2
        h = odometer.heights[j]
        P = np.empty((h, h), dtype=object)
        P[:, :] = Fraction(0)
        for b in range(h):
            P[(b + 1) % h, b] = Fraction(1)
        Pm = make_matrix(j, P)
        assert (compose(adjoint(Pm), Pm).entries == identity_matrix(odometer, j).entries).all()

    def test_substochasticity_preserved(self, chacon):
        M = markov_matrix(chacon, 1, 2, K=6)
        N = markov_matrix(chacon, 1, 5, K=6)
        for X in (compose(M, N), adjoint(M), adjoint(N)):
            for b in range(X.size):
                assert sum(X.entries[:, b]) + X.residual[b] <= 1

    def test_stage_mismatch(self, chacon):
        with pytest.raises(StageMismatch):
            compose(identity_matrix(chacon, 1), identity_matrix(chacon, 2))

    def test_time_arithmetic(self, chacon):
        M = markov_matrix(chacon, 1, 2, K=6)
        N = markov_matrix(chacon, 1, 5, K=6)
        assert compose(M, N).time == 7
        assert adjoint(M).time == -2


class TestScan:
    def test_time_zero_identity(self, odometer):
        scan = weak_limit_scan(odometer, 2, [0], Z=1)
        assert scan.reports[0].identity_coefficient >= 1 - 1e-6
        assert scan.rigidity_candidate == 0

    def test_odometer_heights_rigid(self, odometer):
        times = [odometer.heights[m] for m in range(8, 13)]
        scan = weak_limit_scan(odometer, 3, times, Z=1)
        assert all(r.identity_coefficient >= 0.9 for r in scan.reports)
        assert scan.min_theta_coefficient <= 0.1
