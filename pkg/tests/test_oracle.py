"""
Tests for the oracle module.
"""

import logging
import math
import os
import unittest
from unittest.mock import patch

import numpy as np

from besov_interp.grid import CoeffField, VertexAssignment
from besov_interp.oracle import (
    DEFAULT_CAP,
    MAX,
    SUM,
    EnumerationCapError,
    FunctionalForm,
    VertexTable,
    default_cap,
    k_cuboid_descent,
    k_scalar_vertex,
    k_vertex_exhaustive,
    layer_subset_costs,
    objective_at,
    vertex_cuboid_ratio,
)
from besov_interp.spaces import InnerSpace, OuterSpec, outer_norm
from tests.instances import pair, random_field, random_pair, single, symmetric_l1

FORMS = (SUM, MAX, FunctionalForm("xi", 0.5), FunctionalForm("xi", 2.0))

logger = logging.getLogger(__name__)


class TestFunctionalForm(unittest.TestCase):
    """Tests for functional forms."""

    def test_parse(self):
        self.assertEqual(FunctionalForm.parse("sum"), SUM)
        self.assertEqual(FunctionalForm.parse("MAX"), MAX)
        self.assertEqual(FunctionalForm.parse("xi:0.5"), FunctionalForm("xi", 0.5))
        for bad in ("min", "xi:", "xi:abc", "xi:-1", "xi:inf"):
            with self.subTest(form=bad):
                with self.assertRaises(ValueError):
                    FunctionalForm.parse(bad)

    def test_combine(self):
        self.assertEqual(float(SUM.combine(1.0, 2.0, 3.0)), 7.0)
        self.assertEqual(float(MAX.combine(1.0, 2.0, 3.0)), 6.0)
        self.assertAlmostEqual(float(FunctionalForm("xi", 2.0).combine(3.0, 2.0, 2.0)), 5.0, places=12)
        self.assertEqual(float(FunctionalForm("xi", 0.5).combine(0.0, 0.0, 1.0)), 0.0)


class TestDefaultCap(unittest.TestCase):
    """Tests for the enumeration cap setting."""

    def test_default(self):
        with patch.dict(os.environ, {}, clear=True):
            self.assertEqual(default_cap(), DEFAULT_CAP)

    def test_environment_override(self):
        with patch.dict(os.environ, {"KFUNC_CAP": "5"}):
            self.assertEqual(default_cap(), 5)
        with patch.dict(os.environ, {"KFUNC_CAP": "many"}):
            with self.assertRaises(ValueError):
                default_cap()

    def test_cap_exceeded(self):
        field = CoeffField(0, 0, [np.ones(4)])
        with self.assertRaises(EnumerationCapError) as context:
            k_vertex_exhaustive(1.0, field, symmetric_l1(), cap=3)
        self.assertEqual(context.exception.count, 4)
        with patch.dict(os.environ, {"KFUNC_CAP": "3"}):
            with self.assertRaises(EnumerationCapError):
                VertexTable(field, symmetric_l1())


class TestVertexExhaustive(unittest.TestCase):
    """Tests for the exhaustive vertex functional."""

    def setUp(self):
        """Set up test fixtures."""
        self.rng = np.random.default_rng(2024)
        self.ts = np.logspace(-2, 2, 20)

    def test_single_coefficient(self):
        table = VertexTable(single(1.0), symmetric_l1())
        for t in (0.01, 0.5, 1.0, 3.0, 100.0):
            self.assertAlmostEqual(table.evaluate(t).value, min(1.0, t), places=14)

    def test_worked_layer(self):
        couple = pair(0, 1, InnerSpace.lp(1), 0, 1, InnerSpace.sup())
        result = k_vertex_exhaustive(1.0, CoeffField(0, 0, [[2.0, 1.0]]), couple)
        self.assertAlmostEqual(result.value, 2.0, places=14)
        self.assertEqual(result.assignment, VertexAssignment(0, [[1, 1]]))

    def test_zero_field(self):
        result = k_vertex_exhaustive(2.0, CoeffField(0, 1, [[0.0, 0.0], []]), symmetric_l1())
        self.assertEqual(result.value, 0.0)
        self.assertEqual(result.assignment.shape, (2, 0))

    def test_lexicographic_tie_break(self):
        result = k_vertex_exhaustive(1.0, CoeffField(0, 0, [[1.0, 1.0]]), symmetric_l1())
        self.assertEqual(result.assignment, VertexAssignment(0, [[0, 0]]))

    def test_zero_coefficients_get_side_zero(self):
        field = CoeffField(0, 0, [[0.0, 2.0, 0.0]])
        result = k_vertex_exhaustive(0.1, field, symmetric_l1())
        self.assertEqual(result.assignment, VertexAssignment(0, [[0, 1, 0]]))

    def test_value_matches_assignment(self):
        for _ in range(200):
            field = random_field(self.rng, levels=3)
            couple = random_pair(self.rng)
            t = float(self.rng.choice(self.ts))
            for form in FORMS:
                result = k_vertex_exhaustive(t, field, couple, form)
                expected = objective_at(result.assignment, t, field, couple, form)
                self.assertLessEqual(abs(result.value - expected), 1e-12 * max(expected, 1e-300))

    def test_commutativity(self):
        for _ in range(200):
            field = random_field(self.rng, levels=int(self.rng.integers(2, 4)))
            couple = random_pair(self.rng)
            direct = VertexTable(field, couple)
            swapped = VertexTable(field, couple.swapped())
            for form in FORMS:
                for t in self.ts[::4]:
                    left = direct.evaluate(t, form).value
                    right = t * swapped.evaluate(1.0 / t, form).value
                    self.assertLessEqual(abs(left - right), 1e-12 * left)

    def test_sum_form_is_nondecreasing_and_concave(self):
        for _ in range(60):
            field = random_field(self.rng, levels=int(self.rng.integers(2, 4)))
            couple = random_pair(self.rng)
            ts = np.linspace(0.1, 5.0, 20)
            values = VertexTable(field, couple).curve(ts, SUM)
            scale = float(np.max(values))
            self.assertTrue(np.all(np.diff(values) >= -1e-12 * scale))
            self.assertTrue(np.all(np.diff(values, 2) <= 1e-9 * scale))

    def test_form_sandwich(self):
        for _ in range(60):
            field = random_field(self.rng, levels=int(self.rng.integers(2, 4)))
            couple = random_pair(self.rng)
            table = VertexTable(field, couple)
            for t in self.ts[::3]:
                k_max = table.evaluate(t, MAX).value
                k_sum = table.evaluate(t, SUM).value
                self.assertLessEqual(k_max, k_sum * (1 + 1e-12))
                self.assertLessEqual(k_sum, 2 * k_max * (1 + 1e-12))
                for xi in (0.5, 2.0):
                    k_xi = table.evaluate(t, FunctionalForm("xi", xi)).value
                    self.assertLessEqual(k_max, k_xi * (1 + 1e-12))
                    self.assertLessEqual(k_xi, 2 ** (1 / xi) * k_max * (1 + 1e-12))

    def test_coefficient_monotonicity(self):
        for _ in range(40):
            field = random_field(self.rng, levels=2)
            couple = random_pair(self.rng)
            index = list(field.indices())[int(self.rng.integers(0, field.size))]
            bigger = field.with_value(index, field[index] + 0.5)
            t = float(self.rng.choice(self.ts))
            for form in FORMS:
                before = k_vertex_exhaustive(t, field, couple, form).value
                after = k_vertex_exhaustive(t, bigger, couple, form).value
                self.assertGreaterEqual(after, before * (1 - 1e-12))

    def test_side_costs_match_layer_tables(self):
        couple = pair(0, 1, InnerSpace.lp(1), 0, 1, InnerSpace.sup())
        table = VertexTable(CoeffField(0, 0, [[2.0, 1.0]]), couple)
        a, b = table.side_costs
        np.testing.assert_allclose(a, [3.0, 2.0, 1.0, 0.0])
        np.testing.assert_allclose(b, [0.0, 1.0, 2.0, 2.0])
        a_layer, b_layer = layer_subset_costs([2.0, 1.0], InnerSpace.lp(1), InnerSpace.sup())
        np.testing.assert_allclose(a_layer, a)
        np.testing.assert_allclose(b_layer, b)

    def test_rejects_nonpositive_threshold(self):
        with self.assertRaises(ValueError):
            k_vertex_exhaustive(0.0, single(1.0), symmetric_l1())


class TestScalarVertex(unittest.TestCase):
    """Tests for the scalar-sequence vertex functional."""

    def test_single_value(self):
        for t in (0.2, 1.0, 4.0):
            result = k_scalar_vertex(t, [5.0], OuterSpec(0, 1), OuterSpec(0, 1))
            self.assertAlmostEqual(result.value, 5 * min(1.0, t), places=12)

    def test_two_levels(self):
        for t in (0.1, 0.3, 0.7, 2.0):
            result = k_scalar_vertex(t, [1.0, 1.0], OuterSpec(0, 1), OuterSpec(1, 1))
            self.assertAlmostEqual(result.value, min(1.0, t) + min(1.0, 2 * t), places=12)

    def test_commutativity(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            values = rng.random(int(rng.integers(1, 7)))
            outer0 = OuterSpec(float(rng.uniform(-1, 1)), float(rng.choice([0.5, 1, 2, math.inf])))
            outer1 = OuterSpec(float(rng.uniform(-1, 1)), float(rng.choice([0.5, 1, 2, math.inf])))
            t = float(rng.uniform(0.1, 10))
            left = k_scalar_vertex(t, values, outer0, outer1).value
            right = t * k_scalar_vertex(1 / t, values, outer1, outer0).value
            self.assertLessEqual(abs(left - right), 1e-12 * left)

    def test_empty_sequence(self):
        self.assertEqual(k_scalar_vertex(1.0, [], OuterSpec(0, 1), OuterSpec(0, 1)).value, 0.0)


class TestCuboidDescent(unittest.TestCase):
    """Tests for the coordinate-descent cuboid bound."""

    def test_zero_field(self):
        self.assertEqual(k_cuboid_descent(1.0, CoeffField(0, 0, [[0.0]]), symmetric_l1()), 0.0)

    def test_single_coefficient(self):
        for t in (0.5, 1.0, 2.0):
            self.assertAlmostEqual(k_cuboid_descent(t, single(1.0), symmetric_l1()), min(1.0, t), places=12)

    def test_monotone_in_restarts(self):
        rng = np.random.default_rng(4)
        field = random_field(rng, levels=2, max_total=6)
        couple = pair(0, 2, InnerSpace.lp(2), 0.5, 1, InnerSpace.lp(1))
        values = [k_cuboid_descent(1.0, field, couple, restarts=r, seed=3) for r in (0, 2, 5)]
        self.assertGreaterEqual(values[0], values[1])
        self.assertGreaterEqual(values[1], values[2])

    def test_vertex_bound(self):
        rng = np.random.default_rng(17)
        worst_warm = worst_cold = 0.0
        for _ in range(40):
            field = random_field(rng, levels=2, max_per_layer=3, max_total=6)
            couple = random_pair(rng, exponents=(0.5, 1.0, 2.0, math.inf))
            t = float(rng.choice([0.3, 1.0, 3.0]))
            vertex = k_vertex_exhaustive(t, field, couple)
            warm = k_cuboid_descent(t, field, couple, restarts=2, grid_res=9, warm_start=vertex.assignment)
            self.assertLessEqual(warm, vertex.value + 1e-9)
            cold = k_cuboid_descent(t, field, couple, restarts=2, grid_res=9)
            one_sided = min(outer_norm(field, couple.side0), t * outer_norm(field, couple.side1))
            self.assertLessEqual(cold, one_sided * (1 + 1e-9))
            # rounding g to the nearer vertex at most doubles each side
            self.assertLessEqual(vertex.value, 2 * cold * (1 + 1e-9))
            ratio = vertex_cuboid_ratio(t, field, couple, restarts=2, grid_res=9)
            self.assertGreaterEqual(ratio, 1 - 1e-9)
            self.assertLessEqual(ratio, 2 + 1e-9)
            worst_warm = max(worst_warm, ratio)
            worst_cold = max(worst_cold, vertex.value / cold)
        logger.info("vertex/cuboid ratio: %.6g warm-started, %.6g from cold starts", worst_warm, worst_cold)
        self.assertGreaterEqual(worst_warm, 1.0)

    def test_warm_start_shape(self):
        with self.assertRaises(ValueError):
            k_cuboid_descent(1.0, single(1.0), symmetric_l1(), warm_start=VertexAssignment(0, [[0, 0]]))


if __name__ == "__main__":
    unittest.main()
