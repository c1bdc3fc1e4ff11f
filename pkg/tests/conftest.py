import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from rbacvec.access import AccessMatrix, ExclusiveLattice, build_exclusive_lattice, mask_of

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def lattice_from_sizes(sizes: dict, n_roles: int) -> ExclusiveLattice:
    """Exclusive lattice with the given block sizes; ids are assigned in key order."""
    masks = []
    for tag, s in sizes.items():
        masks += [tag] * s
    return build_exclusive_lattice(AccessMatrix.from_masks(masks, n_roles))


def random_lattice(seed: int, n_roles: int = 5, n_blocks: int = 12, lo: int = 5, hi: int = 3000,
                   max_card: int | None = None) -> ExclusiveLattice:
    rng = np.random.default_rng(seed)
    max_card = max_card or n_roles
    tags = set()
    full = (1 << n_roles) - 1
    n_blocks = min(n_blocks, full)
    while len(tags) < n_blocks:
        m = int(rng.integers(1, full + 1))
        if bin(m).count("1") <= max_card:
            tags.add(m)
    sizes = {t: int(rng.integers(lo, hi)) for t in sorted(tags)}
    return lattice_from_sizes(sizes, n_roles)


@st.composite
def lattices(draw, max_roles: int = 5, max_blocks: int = 10, hi: int = 2000):
    n_roles = draw(st.integers(2, max_roles))
    full = (1 << n_roles) - 1
    tags = draw(st.sets(st.integers(1, full), min_size=1, max_size=min(max_blocks, full)))
    sizes = {t: draw(st.integers(1, hi)) for t in sorted(tags)}
    return lattice_from_sizes(sizes, n_roles)


R1, R2, R3 = 0, 1, 2

# Three-role toy: block sizes chosen so that the per-role layout stores 1.5x the data and
# copying {r1,r2} into {r1} plus {r1,r2,r3} into {r1,r3} stores 1.2x.
TOY_SIZES = {
    mask_of([R1]): 3000, mask_of([R2]): 1500, mask_of([R3]): 1500,
    mask_of([R1, R2]): 1000, mask_of([R1, R3]): 1500, mask_of([R2, R3]): 500,
    mask_of([R1, R2, R3]): 1000,
}


@pytest.fixture
def toy():
    return lattice_from_sizes(TOY_SIZES, 3)


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for i in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[i])
