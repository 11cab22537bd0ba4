import numpy as np
import pytest

from seepage.mesh import ReservoirGeometry, extract_trace, generate_two_reservoir_mesh


@pytest.fixture(scope="session")
def reservoir():
    geom = ReservoirGeometry(cells_per_unit=8)
    mesh = generate_two_reservoir_mesh(geom)
    return geom, mesh, extract_trace(mesh)


def max_abs_diff(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0))


class ContactRun:
    """Per-step record of a channel-contact run."""

    def __init__(self, eps_k_tau):
        import time
        from dataclasses import replace

        from seepage.cli import channel_contact_problem, channel_contact_series
        from seepage.config import default_scenario

        base = default_scenario("channel_contact")
        self.scenario = replace(base, params=base.params.with_(k_tau=eps_k_tau / base.params.epsilon))
        self.problem = channel_contact_problem(self.scenario)
        self.rows, self.contacts, self.iterations = [], [], []
        self.before_contact = None
        prev = self.problem.initial_state()
        t0 = time.perf_counter()
        for state, info, row in channel_contact_series(self.scenario, self.problem):
            if info.contact.active.any() and self.before_contact is None:
                self.before_contact = prev
            self.rows.append(row)
            self.contacts.append(info.contact)
            self.iterations.append(info.newton_iterations)
            prev = state
        self.seconds = time.perf_counter() - t0
        self.final = prev
        self.t = np.array([r[0] for r in self.rows])
        self.min_gap = np.array([r[1] for r in self.rows])
        self.active = np.array([c.active.sum() for c in self.contacts])

    @property
    def first_contact(self):
        hit = np.flatnonzero(self.active > 0)
        return float(self.t[hit[0]]) if len(hit) else None


@pytest.fixture(scope="session")
def contact_runs():
    return {ekt: ContactRun(ekt) for ekt in (1e-1, 1e-3)}
