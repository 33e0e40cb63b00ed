import pytest

from fwt.model import FeeMenu, SystemParams, TaxVector


@pytest.fixture
def table_params() -> SystemParams:
    """Evaluation defaults: Ethereum-based constants, desk-scale users."""
    return SystemParams()


@pytest.fixture
def zero_tax() -> TaxVector:
    return TaxVector.zero()


@pytest.fixture
def accepted_menu(table_params) -> FeeMenu:
    """Menu with both fees above the single-miner acceptance threshold."""
    c_s = table_params.storage_cost_per_byte
    return FeeMenu(rho_high=4.0 * c_s, rho_low=2.0 * c_s)
