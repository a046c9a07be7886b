import random
from fractions import Fraction

import pytest

from rankone.errors import DegenerateStrip, NotRelativeProduct, ShiftTooLarge
from rankone.joinings import (
    ColumnSet,
    Joining,
    Rectangle,
    column_measure,
    diagonal_component,
    diagonal_component_matrix,
    equivalent,
    evaluate,
    mu2_component_audit,
    relative_product,
    shift,
    strip_audit,
    symmetrized_measure,
)
from rankone.operators import dictionary, identity_matrix, theta_matrix
from rankone.symbolic import LevelSet


def random_class_joining(rng, max_atoms=4, max_shift=12, allow_product=True):
    atoms = rng.randint(1, max_atoms)
    zs = rng.sample(range(-max_shift, max_shift + 1), atoms)
    weights = [Fraction(rng.randint(1, 9)) for _ in zs]
    pm = Fraction(rng.randint(0, 3)) if allow_product else Fraction(0)
    total = sum(weights) + pm
    return Joining.mixture({z: w / total for z, w in zip(zs, weights)}, pm / total)


class TestJoiningClass:
    def test_weights_validated(self):
        with pytest.raises(ValueError):
            Joining.mixture({0: Fraction(1, 2)}, Fraction(1, 4))
        with pytest.raises(ValueError):
            Joining.mixture({0: Fraction(3, 2)}, Fraction(-1, 2))

    def test_zero_weights_dropped(self):
        nu = Joining.mixture({0: 1, 5: 0})
        assert nu.diag == ((0, Fraction(1)),)

    def test_simplex_preserved_under_ops(self):
        rng = random.Random(2024)
        for _ in range(50):
            nu = random_class_joining(rng)
            nu2 = random_class_joining(rng)
            for out in (shift(nu, rng.randint(-9, 9)), relative_product(nu, nu2)):
                total = sum((w for _, w in out.diag), Fraction(0)) + out.product_weight
                assert total == 1
                assert all(w > 0 for _, w in out.diag)


class TestRelativeProductAlgebra:
    def test_diag_rule(self):
        for a in range(-6, 7):
            for b in range(-6, 7):
                eta = relative_product(Joining.off_diagonal(a), Joining.off_diagonal(b))
                assert eta == Joining.off_diagonal(b - a)

    def test_product_absorbs(self):
        pm = Joining.product_measure()
        nu = Joining.mixture({2: Fraction(1, 3), -1: Fraction(2, 3)})
        assert relative_product(pm, nu) == pm
        assert relative_product(nu, pm) == pm

    def test_bilinear_expansion(self):
        nu = Joining.mixture({1: Fraction(1, 2), 4: Fraction(1, 2)})
        eta = relative_product(nu, nu)
        assert eta.diag_weight(0) == Fraction(1, 2)
        assert eta.diag_weight(3) == Fraction(1, 4)
        assert eta.diag_weight(-3) == Fraction(1, 4)
        assert eta.symmetric_square

    def test_shift_consistency(self):
        rng = random.Random(11)
        for _ in range(30):
            nu = random_class_joining(rng)
            nu2 = random_class_joining(rng)
            z = rng.randint(-8, 8)
            assert relative_product(shift(nu, z), nu2) == shift(
                relative_product(nu, nu2), -z
            )

    def test_diagonal_component_rules(self):
        assert diagonal_component(Joining.off_diagonal(0)) == 1
        assert diagonal_component(Joining.product_measure()) == 0
        rng = random.Random(3)
        for _ in range(25):
            nu = random_class_joining(rng, allow_product=False)
            eta = relative_product(nu, nu)
            expected = sum((w * w for _, w in nu.diag), Fraction(0))
            assert diagonal_component(eta) == expected
            assert expected > 0
        for _ in range(25):
            nu = random_class_joining(rng, allow_product=True)
            if nu == Joining.product_measure():
                continue
            assert diagonal_component(relative_product(nu, nu)) > 0

    def test_diagonal_component_matrix_path(self, odometer):
        mem = dictionary(odometer, 2, Z=1, K=8)
        assert diagonal_component_matrix(identity_matrix(odometer, 2), mem) > 0.99
        assert diagonal_component_matrix(theta_matrix(odometer, 2), mem) < 1e-9


class TestShiftEquivalence:
    def test_example(self):
        assert equivalent(Joining.off_diagonal(2), Joining.off_diagonal(5), 5) == 3

    def test_product_never_equivalent_to_diag(self):
        assert equivalent(Joining.product_measure(), Joining.off_diagonal(0), 8) is None

    def test_shift_roundtrip(self):
        rng = random.Random(8)
        for _ in range(30):
            nu = random_class_joining(rng)
            z = rng.randint(-10, 10)
            assert shift(shift(nu, z), -z) == nu
            assert equivalent(nu, shift(nu, z), 10) == z


class TestEvaluate:
    def test_diagonal_on_square(self, chacon):
        A = LevelSet(1, (0, 2))
        v, e = evaluate(chacon, Joining.off_diagonal(0), Rectangle(A, A))
        assert v == A.normalized_measure(chacon)

    def test_product_measure_exact(self, chacon):
        A = LevelSet(1, (0, 2))
        B = LevelSet(1, (1,))
        v, e = evaluate(chacon, Joining.product_measure(), Rectangle(A, B))
        assert v == A.normalized_measure(chacon) * B.normalized_measure(chacon)
        assert e == 0

    def test_rectangle_values_in_unit_interval(self, katok):
        rng = random.Random(5)
        h = katok.heights[1]
        for _ in range(20):
            nu = random_class_joining(rng)
            A = LevelSet(1, tuple(rng.sample(range(h), 3)))
            B = LevelSet(1, tuple(rng.sample(range(h), 3)))
            v, e = evaluate(katok, nu, Rectangle(A, B))
            assert 0 <= v <= 1

    def test_marginals_within_tolerance(self, chacon):
        # the full tower stands in for the space, so its mass deficit is slack
        rng = random.Random(17)
        j = 2
        full = LevelSet.full(chacon, j)
        slack = 1 - chacon.coverage(j)
        for _ in range(10):
            nu = random_class_joining(rng)
            A = LevelSet(j, tuple(rng.sample(range(chacon.heights[j]), 4)))
            v, e = evaluate(chacon, nu, Rectangle(A, full))
            mu = A.normalized_measure(chacon)
            assert abs(v - mu) <= e + slack
            v2, e2 = evaluate(chacon, nu, Rectangle(full, A))
            assert abs(v2 - mu) <= e2 + slack

    def test_shift_too_large_propagates(self, chacon):
        A = LevelSet(1, (0,))
        with pytest.raises(ShiftTooLarge):
            evaluate(chacon, Joining.off_diagonal(50), Rectangle(A, A), K=2)

    def test_mixture_regression(self, chacon):
        # LOCKED by the committed oracle run
        from rankone.symbolic import orbit_oracle_correlation

        nu = Joining.mixture({3: Fraction(1, 2)}, Fraction(1, 2))
        A = LevelSet(1, (0, 2))
        B = LevelSet(1, (1, 3))
        v, e = evaluate(chacon, nu, Rectangle(A, B), K=6)
        assert v == Fraction(7393266981, 35303559200)
        oracle = orbit_oracle_correlation(chacon, A, B, 3, K=6) / chacon.total_mass
        pm = A.normalized_measure(chacon) * B.normalized_measure(chacon)
        assert v == (oracle + pm) / 2


class TestColumnMeasure:
    def test_diag_on_own_column(self, chacon):
        j = 2
        h = chacon.heights[j]
        for k in (0, 3, -4):
            nu = Joining.off_diagonal(k)
            v, _ = column_measure(chacon, nu, ColumnSet(j, k))
            assert v == (h - abs(k) + 1) * chacon.level_measure(j) / chacon.total_mass

    def test_diagonal_zero_column(self, chacon):
        j = 2
        h = chacon.heights[j]
        v, _ = column_measure(chacon, Joining.off_diagonal(0), ColumnSet(j, 0))
        mass_j = chacon.tower_masses[j]
        assert v == (mass_j + chacon.level_measure(j)) / chacon.total_mass

    def test_product_measure_column(self, chacon):
        j = 2
        h = chacon.heights[j]
        v, _ = column_measure(chacon, Joining.product_measure(), ColumnSet(j, 0))
        unit = chacon.level_measure(j) / chacon.total_mass
        assert v == (h + 1) * unit * unit

    def test_offset_bound(self, chacon):
        with pytest.raises(ShiftTooLarge):
            ColumnSet(2, 14).rectangle_count(chacon)

    def test_closed_form_matches_rectangle_sum(self, chacon):
        # the column is a union of level rectangles; summing their measured
        # values (plus the one rectangle poking past the top level, equal to
        # the base correlation) must agree within accumulated bounds
        j, K = 2, 8
        h = chacon.heights[j]
        base = LevelSet.single(j, 0)
        for k in (0, 2, -3):
            for nu in (Joining.off_diagonal(1), Joining.product_measure(),
                       Joining.mixture({-2: Fraction(1, 3)}, Fraction(2, 3))):
                v, e = column_measure(chacon, nu, ColumnSet(j, k), K=K)
                total = Fraction(0)
                err = Fraction(0)
                lo = max(0, -k)
                hi = h - 1 - max(0, k)
                for i in range(lo, hi + 1):
                    rect = Rectangle(LevelSet.single(j, i + k), LevelSet.single(j, i))
                    vi, ei = evaluate(chacon, nu, rect, K=K)
                    total += vi
                    err += ei
                boundary, boundary_err = evaluate(
                    chacon, nu, Rectangle(base, base), K=K
                )
                # shift the boundary rectangle's diagonal terms to z - k
                boundary = Fraction(0)
                boundary_err = Fraction(0)
                from rankone.symbolic import correlation as corr

                for z, w in nu.diag:
                    cv = corr(chacon, base, base, z - k, K=K)
                    boundary += w * cv.value / chacon.total_mass
                    boundary_err += w * cv.error_bound / chacon.total_mass
                unit = base.normalized_measure(chacon)
                boundary += nu.product_weight * unit * unit
                assert abs(v - (total + boundary)) <= e + err + boundary_err


class TestStripAudit:
    def test_requires_relative_square(self, chacon):
        with pytest.raises(NotRelativeProduct):
            strip_audit(chacon, Joining.off_diagonal(2), 2, Fraction(1, 10))

    def test_diagonal_always_passes(self, chacon):
        for eps in (Fraction(1, 20), Fraction(2, 5)):
            rep = strip_audit(chacon, Joining.off_diagonal(0), 2, eps)
            assert rep.passed and rep.margin > 0

    def test_product_measure_passes(self, chacon, katok, ornstein):
        pm = Joining.product_measure()
        for c in (chacon, katok, ornstein):
            for eps in (Fraction(1, 10), Fraction(2, 5)):
                rep = strip_audit(c, pm, 1, eps)
                assert rep.passed

    def test_random_relative_squares_pass(self, chacon):
        rng = random.Random(404)
        for _ in range(10):
            nu = random_class_joining(rng, max_atoms=4, max_shift=8)
            eta = relative_product(nu, nu)
            for eps in (Fraction(1, 20), Fraction(1, 5), Fraction(2, 5), Fraction(1, 2)):
                rep = strip_audit(chacon, eta, 2, eps)
                assert rep.passed, (nu, eps, rep)

    def test_box_mass_dominates_square(self, chacon):
        # relative squares give the corner box at least its side mass squared
        rng = random.Random(21)
        for _ in range(8):
            nu = random_class_joining(rng, max_atoms=3, max_shift=5)
            eta = relative_product(nu, nu)
            rep = strip_audit(chacon, eta, 2, Fraction(2, 5))
            assert rep.eta_box + rep.error_bound >= rep.box_mass_sq

    def test_report_dict_schema(self, chacon):
        rep = strip_audit(chacon, Joining.product_measure(), 1, Fraction(1, 10))
        d = rep.to_dict()
        assert set(d) == {
            "stage",
            "epsilon",
            "strip_halfwidth",
            "eta_D",
            "error_bound",
            "coverage",
            "bound",
            "margin",
            "pass",
            "eta_box",
            "box_mass_sq",
        }


class TestComponentAudit:
    # LOCKED constants from the committed oracle run of the mixing preset
    MIXING_ALPHA_BASE = Fraction(51544534199, 62500000000)
    MIXING_ALPHA_HALVES = Fraction(8445852107, 25312500000)
    MIXING_COMPONENT_DIAG6 = 0.7131213094123456

    def test_diagonal_concentration_gives_tiny_component(self, chacon):
        rep = mu2_component_audit(chacon, Joining.off_diagonal(0), 2, Fraction(1, 5))
        assert rep.component < Fraction(1, 10)
        assert rep.strip_mass > 0

    def test_engineered_preset_bound_positive(self, mixing):
        # alpha + coverage exceeds one at the base level, so the conditioned
        # product-measure bound is positive for small epsilon
        from rankone.estimators import TestFamily as SetFamily, estimate_alpha

        fam = (LevelSet(0, (0,)),)
        times = [37 + 83 * t for t in range(10)]
        a0 = estimate_alpha(mixing, SetFamily(0, fam), times, K=5)
        assert a0.exact == self.MIXING_ALPHA_BASE
        assert a0.exact + mixing.coverage(0) > 1
        rep = mu2_component_audit(
            mixing, Joining.off_diagonal(40), 0, Fraction(1, 20), K=5,
            family=fam, alpha_scan=times,
        )
        assert rep.bound_positive
        assert rep.component_meets_bound

    def test_large_shift_component_tracks_mixing_floor(self, mixing):
        from rankone.estimators import TestFamily as SetFamily, estimate_alpha

        h1 = mixing.heights[1]
        halves = (
            LevelSet(1, tuple(range(h1 // 2))),
            LevelSet(1, tuple(range(h1 // 2, h1))),
        )
        times = [3 * h1 + t * (2 * h1 + 1) for t in range(8)]
        a1 = estimate_alpha(mixing, SetFamily(1, halves), times, K=5)
        assert a1.exact == self.MIXING_ALPHA_HALVES
        rep = mu2_component_audit(
            mixing, Joining.off_diagonal(6), 1, Fraction(2, 5), K=5,
            family=halves, alpha_scan=times,
        )
        assert abs(float(rep.component) - self.MIXING_COMPONENT_DIAG6) <= 1e-9
        # desk-scale agreement band between the component and the scanned floor
        assert abs(rep.component - a1.exact) <= Fraction(2, 5)

    def test_degenerate_strip(self, odometer):
        # the odometer base level never returns off multiples of the height
        with pytest.raises(DegenerateStrip):
            mu2_component_audit(odometer, Joining.off_diagonal(20), 3, Fraction(1, 10))

    def test_report_fields(self, chacon):
        # epsilon wide enough that the off-diagonal's own column is in the strip
        rep = mu2_component_audit(chacon, Joining.off_diagonal(3), 2, Fraction(2, 5))
        d = rep.to_dict()
        assert d["bound_positive"] == (rep.lower_bound > 0)
        assert 0 <= rep.component <= 1


class TestSymmetrizedMeasure:
    def test_equal_sets(self, chacon):
        A = LevelSet(1, (0, 2))
        mu = A.normalized_measure(chacon)
        assert symmetrized_measure(chacon, Rectangle(A, A)) == mu * mu

    def test_disjoint_sets(self, chacon):
        A = LevelSet(1, (0,))
        B = LevelSet(1, (1, 3))
        expected = 2 * A.normalized_measure(chacon) * B.normalized_measure(chacon)
        assert symmetrized_measure(chacon, Rectangle(A, B)) == expected

    def test_full_first_side(self, odometer):
        # odometer towers cover everything, so the full level set is the space
        j = 3
        full = LevelSet.full(odometer, j)
        B = LevelSet(j, (1, 5))
        mu = B.normalized_measure(odometer)
        assert symmetrized_measure(odometer, Rectangle(full, B)) == 2 * mu - mu * mu
