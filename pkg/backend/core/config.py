import os
from dotenv import load_dotenv

from .exceptions import ConfigurationError

# Load environment variables
load_dotenv()


def _env_int(name: str, default: int, minimum: int) -> int:
    raw = os.getenv(name, str(default))
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"{name} must be an integer, got {raw!r}", variable=name)
    if value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}", variable=name)
    return value


def _env_flag(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().lower() in ('1', 'true', 'yes', 'on')


# Quadrature configuration
QUADRATURE_CONFIG = {
    'order': _env_int('EOC_LAB_QUAD_ORDER', 200, 2),
    'kink_split': _env_flag('EOC_LAB_KINK_SPLIT', True),
    'legendre_order': 100,       # nodes per segment on kinked integrands
    'truncation': 12.0,          # |z| cut-off of the split rule
    'degenerate_corr_tol': 1e-12,
}

# Monte-Carlo oracle configuration
MC_CONFIG = {
    'samples': _env_int('EOC_LAB_MC_SAMPLES', 1_000_000, 1),
    'seed': _env_int('EOC_LAB_SEED', 0, 0),
}

# Picard iteration for the variance map
FIXED_POINT_CONFIG = {
    'tol': 1e-12,
    'max_iters': 10_000,
    'divergence': 1e12,
    'x0_minimal': 1e-8,
}

# Edge-of-chaos solver
EOC_CONFIG = {
    'sigma_w_low': 1e-3,
    'sigma_w_high': 10.0,
    'candidates': 40,
    'sigma_w_tol': 1e-9,
    'fold_sigma_w_tol': 1e-4,    # bisection stops here while the upper end diverges
    'residual_tol': 1e-7,
    'input_variance': 1.0,
}

# Grids for the sup operations and finite differences
GRID_CONFIG = {
    'sup_grid': 400,
    'x_max': 10.0,
    'q_max': 10.0,
    'growth_half_width': 100.0,
    'fd_step': 1e-4,
}

# Sufficient-condition checks
CONDITION_CONFIG = {
    'monotone_tol': -1e-8,
    'convex_tol': -1e-6,
    'convex_x_max': 0.99,
    'q_limit_factor': 5.0,
    'x_grid': 101,
}

# Finite-width simulator
SIMULATION_CONFIG = {
    'workers': _env_int('EOC_LAB_WORKERS', 4, 1),
    'radial_bins': 20,
    'almost_constant_threshold': 0.2,
}

LOG_LEVEL = os.getenv('EOC_LAB_LOG_LEVEL', 'WARNING').upper()
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
