#!/usr/bin/env python3
"""
Admin Tools - Configuration and Quadrature Status Check
"""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from backend.core import config
from backend.core.activations import ACTIVATION_NAMES, make_activation
from backend.core.models import McConfig
from backend.services.quadrature_service import quadrature

# (activation, qa, qb, c) pairs for the quadrature-vs-Monte-Carlo comparison
ORACLE_CASES = [
    ('tanh', 1.0, 1.0, 0.5),
    ('relu', 2.0, 0.5, -0.3),
    ('swish', 0.44, 0.44, 0.9),
    ('elu', 1.0, 1.0, 0.99),
]


def show_config():
    """Show the effective configuration"""
    print("⚙️ Effective configuration")
    print("=" * 50)
    for name in ('QUADRATURE_CONFIG', 'MC_CONFIG', 'FIXED_POINT_CONFIG', 'EOC_CONFIG', 'GRID_CONFIG',
                 'CONDITION_CONFIG', 'SIMULATION_CONFIG'):
        print(f"📋 {name}")
        for key, value in getattr(config, name).items():
            print(f"  - {key}: {value}")
    print(f"📋 LOG_LEVEL: {config.LOG_LEVEL}")
    print("=" * 50)


def check_quadrature(samples=200_000):
    """Compare the quadrature expect2 against the Monte-Carlo oracle"""
    print(f"🧪 Checking quadrature against Monte-Carlo ({samples} samples)...")
    mc = McConfig(samples=samples, seed=config.MC_CONFIG['seed'])
    ok = True
    for name, qa, qb, c in ORACLE_CASES:
        phi = make_activation(name)
        exact = quadrature.expect2(phi.value, phi.value, qa, qb, c, g_kinks=phi.kinks, h_kinks=phi.kinks)
        mean, se = quadrature.mc_expect2(phi.value, phi.value, qa, qb, c, mc)
        z = abs(exact - mean) / se if se > 0 else math.inf
        passed = z < 4.0
        ok = ok and passed
        print(f"{'✅' if passed else '❌'} {name} (qa={qa}, qb={qb}, c={c}): "
              f"quadrature {exact:.8f}, Monte-Carlo {mean:.8f} ± {se:.1e} ({z:.1f} se)")
    return ok


def check_system_status():
    """Check system status"""
    print("📊 Checking system status...")
    print("=" * 50)
    try:
        for name in ('relu', 'tanh', 'hard_tanh', 'swish', 'elu', 'arctan', 'linear'):
            make_activation(name)
        print(f"✅ {len(ACTIVATION_NAMES)} activation families available")
    except Exception as e:
        print(f"❌ Activation registry failed: {e}")
        return False
    quad_ok = check_quadrature(samples=50_000)
    print("=" * 50)
    if quad_ok:
        print("🎉 System status is good, ready to use!")
    else:
        print("❌ Quadrature disagrees with the oracle, check EOC_LAB_QUAD_ORDER and EOC_LAB_KINK_SPLIT")
    return quad_ok


def show_info():
    """Show activation and subcommand information"""
    print("🔗 eoc-lab Information")
    print("=" * 50)
    print("🧮 Activations:")
    for name in ACTIVATION_NAMES:
        print(f"  - {name}")
    print()
    print("📋 Subcommands (python run.py <command> --help):")
    print("  - eoc, fixed-point, var-fn, corr-fn, iterate, depth-scales")
    print("  - contraction, relu-rate, hardtanh-var")
    print("  - check, sup-dev, tail-exponent, simulate")
    print("=" * 50)


def main():
    """Main function"""
    if len(sys.argv) < 2:
        print("🔧 Admin Tools")
        print("=" * 30)
        print("Usage:")
        print("  python admin_tools.py status      - Check system status")
        print("  python admin_tools.py config      - Show effective configuration")
        print("  python admin_tools.py quadrature  - Compare quadrature with Monte-Carlo")
        print("  python admin_tools.py info        - Show activations and subcommands")
        print("  python admin_tools.py all         - Run all checks")
        return

    command = sys.argv[1].lower()

    if command == "status":
        sys.exit(0 if check_system_status() else 1)
    elif command == "config":
        show_config()
    elif command == "quadrature":
        sys.exit(0 if check_quadrature() else 1)
    elif command == "info":
        show_info()
    elif command == "all":
        print("🔧 Running all system checks...")
        print()
        show_config()
        print()
        ok = check_system_status()
        print()
        show_info()
        sys.exit(0 if ok else 1)
    else:
        print(f"❌ Unknown command: {command}")
        print("Use 'python admin_tools.py' to see help")
        sys.exit(2)


if __name__ == "__main__":
    main()
