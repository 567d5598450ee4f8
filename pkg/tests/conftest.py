"""Shared fixtures: small hand-built feeders and the bundled case."""

from __future__ import annotations

import numpy as np
import pytest

from nwaplan.network import (Bus, CaseFile, Economics, Feeder, InvestorEconomics, Line,
                             PlannerEconomics, TimeSeriesSet, Transformer, load_case)
from nwaplan.synth import BUNDLED_CASE


def single_phase_z(r_ohm: float, x_ohm: float) -> np.ndarray:
    z = np.zeros((3, 3), complex)
    z[0, 0] = r_ohm + 1j * x_ohm
    return z


def two_bus_case(load_kw=100.0, r_pu=0.01, x_pu=0.02, steps=1, transformer=None, q_kvar=0.0):
    """Substation ``s`` feeding bus ``1`` over one single-phase line.

    The power base is 1000 kW per phase (3000 kVA three-phase), so a 100 kW
    load is 0.1 pu and the voltage drop is 2 r P in pu.
    """
    feeder = Feeder({"s": Bus("s", ("a",)), "1": Bus("1", ("a",), transformer=transformer)},
                    [], "s", kv_ll=4.16, kva_base=3000.0)
    zb = feeder.z_base
    line = Line("s", "1", ("a",), 1000.0, single_phase_z(r_pu * zb, x_pu * zb))
    feeder = Feeder(feeder.buses, [line], "s", kv_ll=4.16, kva_base=3000.0)
    series = TimeSeriesSet(
        steps=steps, step_hours=1.0,
        loads={("1", "a"): np.full(steps, float(load_kw))},
        loads_q={("1", "a"): np.full(steps, float(q_kvar))},
        lmp=np.full(steps, 0.05), production={},
        period_of_step=np.zeros(steps, dtype=int), demand_prices=np.array([10.0]),
        annualization=1.0)
    return CaseFile("two-bus", feeder, series, Economics(PlannerEconomics(), InvestorEconomics()),
                    [], f"two-bus:{load_kw}:{r_pu}:{x_pu}:{steps}")


@pytest.fixture(scope="session")
def bundled_path():
    return BUNDLED_CASE


@pytest.fixture(scope="session")
def bundled_case():
    return load_case(BUNDLED_CASE)


__all__ = ["two_bus_case", "single_phase_z", "Transformer"]
