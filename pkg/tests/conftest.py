import pytest
from hypothesis import settings

from qwannier import bloch, pipeline, refspec
from qwannier.magphase import FieldSpec

settings.register_profile("qw", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("qw")

# B0 is chosen so that every eps used in the torus tests puts an even number of
# flux quanta through the 16 x 16 supercell (eps = 0.01 <-> 8 quanta).
TORUS_L = 16


@pytest.fixture(scope="session")
def square():
    from qwannier.lattice import Lattice2D
    return Lattice2D.square()


@pytest.fixture(scope="session")
def B0_torus(square):
    return refspec.quantized_B0(0.01, TORUS_L, 8, square)


@pytest.fixture(scope="session")
def mathieu_setup():
    s = pipeline.prepare(bloch.mathieu(0.1), grid=64, cutoff=5.0, b=0.12, grid_per_cell=12)
    s.shift()
    return s


@pytest.fixture(scope="session")
def lowsym_setup():
    return pipeline.prepare(bloch.lowsym(0.4), grid=64, cutoff=5.0, b=0.1, grid_per_cell=12)


@pytest.fixture(scope="session")
def torus_kernels(mathieu_setup, B0_torus):
    """Lazily computed constant-field kernels of the Mathieu crystal, keyed by eps."""
    cache = {}

    def get(eps):
        if eps not in cache:
            cache[eps] = pipeline.torus_kernel(mathieu_setup, FieldSpec(B0=B0_torus, epsilon=eps), TORUS_L)
        return cache[eps]

    return get


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def put(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return put


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
