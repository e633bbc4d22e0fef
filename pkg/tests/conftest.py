import pytest

from pairea.tsp_core import TspInstance, generate_clu, generate_rue, held_karp_optimal


@pytest.fixture
def square():
    return TspInstance("square", ((0, 0), (1, 0), (1, 1), (0, 1)))


@pytest.fixture(scope="session")
def rue10():
    inst = generate_rue(10, 42)
    held_karp_optimal(inst)
    return inst


@pytest.fixture(scope="session")
def clu12():
    inst = generate_clu(12, seed=3)
    held_karp_optimal(inst)
    return inst
