import pytest

from hardylab import kernels as K


@pytest.fixture(scope="session")
def cauchy_table_512():
    return K.build_fractional_table(1.0, 1, resolution=512, rmax=100.0)


@pytest.fixture(scope="session")
def cauchy_table_hi():
    return K.build_fractional_table(1.0, 1, resolution=6144, rmax=150.0)


@pytest.fixture(scope="session")
def stable_tables_hi():
    """High-resolution tables for the fractional acceptance checks."""
    return {th: K.build_fractional_table(th, 1, resolution=6144, rmax=150.0)
            for th in (0.5, 1.0, 1.5)}
