from hypothesis import given
from hypothesis import strategies as st

from cellsim.seeding import derive_seed, rng, splitmix64


def test_splitmix_reference_value():
    # first output of the reference SplitMix64 stream seeded with 0
    assert splitmix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF


@given(st.integers(0, 2**64 - 1), st.integers(0, 10_000))
def test_derived_seeds_are_64_bit(base, i):
    s = derive_seed(base, i)
    assert 0 <= s < 2**64
    assert s != derive_seed(base, i + 1)


def test_rng_is_reproducible():
    assert rng(3).integers(1 << 30) == rng(3).integers(1 << 30)
