"""Authenticated secret sharing over a prime field, with a trusted-dealer offline phase."""

from .dealer import (
    DealerMaterial,
    MaterialCounts,
    PartyMaterial,
    TrustedDealer,
    read_party_material,
    write_party_material,
)
from .field import FieldElement, FieldParams, is_prime, next_prime
from .online import (
    ZERO_TEST_MODES,
    CpContext,
    Exchange,
    LookupPolynomial,
    accept_inputs,
    dh_input_share,
    input_masks,
    interpolate_lookup,
    mac_check,
    mask_inputs,
    mul_shares,
    open_values,
    reveal_checked,
    run_lockstep,
    zero_test,
)
from .shares import AuthShare, ExpChain, ShareOps, Triple, reconstruct, reconstruct_mac


def centered_lift(x, field: FieldParams = None) -> int:
    """Signed representative of a field element: x if x < p/2 else x - p."""
    if isinstance(x, FieldElement):
        return x.lift()
    return field.lift(x)


def zero_test_material(field: FieldParams, n: int, mode: str = "premul") -> dict:
    """Keyword arguments for :meth:`TrustedDealer.prepare` covering ``n`` zero tests."""
    return dict(rand2=n, chain_length=field.bits, triples=n if mode == "beaver" else 0,
                with_products=(mode == "premul"))


__all__ = [name for name in dir() if not name.startswith("_")]
