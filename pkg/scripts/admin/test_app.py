#!/usr/bin/env python3
"""
eoc-lab Smoke Test Script

Runs a handful of known values through every layer of the stack.
The full suite lives under tests/ (pytest).
"""

import io
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))


def test_imports():
    """Test all module imports"""
    print("🔍 Testing module imports...")

    modules = [
        'backend.core.config',
        'backend.core.activations',
        'backend.services.quadrature_service',
        'backend.services.meanfield_service',
        'backend.services.eoc_service',
        'backend.services.conditions_service',
        'backend.services.simulation_service',
        'backend.services.repro_service',
        'backend.api.cli',
    ]
    for name in modules:
        try:
            __import__(name)
            print(f"✅ {name} import successful")
        except Exception as e:
            print(f"❌ {name} import failed: {e}")
            return False
    return True


def test_quadrature():
    """E[relu(Z)^2] = 1/2"""
    print("\n📐 Testing Gaussian quadrature...")

    try:
        from backend.core.activations import make_activation
        from backend.services.quadrature_service import quadrature
        relu = make_activation('relu')
        value = quadrature.expect1(lambda z: relu(z) ** 2, 1.0, kinks=relu.kinks)
        if abs(value - 0.5) < 1e-12:
            print(f"✅ E[relu(Z)^2] = {value:.15f}")
            return True
        print(f"❌ E[relu(Z)^2] = {value}, expected 0.5")
        return False
    except Exception as e:
        print(f"❌ Quadrature failed: {e}")
        return False


def test_mean_field():
    """ReLU fixed point at (1, 1) and the ReLU edge of chaos"""
    print("\n🔁 Testing mean-field recursions...")

    try:
        from backend.core.activations import make_activation
        from backend.core.models import MeanFieldParams
        from backend.services.eoc_service import eoc_solver
        from backend.services.meanfield_service import meanfield_engine

        relu = make_activation('relu')
        fixed = meanfield_engine.minimal_fixed_point(MeanFieldParams(sigma_b2=1.0, sigma_w2=1.0), relu)
        print(f"✅ ReLU (1, 1) fixed point q = {fixed.q:.10f} ({fixed.status.value})")

        point = eoc_solver.eoc_solve(0.0, relu)
        print(f"✅ ReLU edge of chaos sigma_w = {point.sigma_w:.15f}")
        return fixed.converged and abs(fixed.q - 2.0) < 1e-9 and point.sigma_w == math.sqrt(2.0)
    except Exception as e:
        print(f"❌ Mean-field checks failed: {e}")
        return False


def test_cli():
    """Run one subcommand end to end"""
    print("\n💻 Testing the command line...")

    try:
        from backend.api.cli import run
        out, err = io.StringIO(), io.StringIO()
        code = run(['relu-rate', '--depth', '100'], stdout=out, stderr=err)
        rows = out.getvalue().strip().splitlines()
        if code == 0 and rows[0] == 'l,l2_gap,gap,limit':
            print(f"✅ relu-rate wrote {len(rows) - 1} rows")
            return True
        print(f"❌ relu-rate exited with {code}: {err.getvalue().strip()}")
        return False
    except Exception as e:
        print(f"❌ Command line failed: {e}")
        return False


def main():
    """Main test function"""
    print("🧪 eoc-lab Smoke Test Started\n")

    # Test module imports
    if not test_imports():
        print("\n❌ Module import test failed, please check dependency installation")
        sys.exit(1)

    quad_ok = test_quadrature()
    mf_ok = test_mean_field()
    cli_ok = test_cli()

    # Summary
    print("\n📋 Test Summary:")
    print("   Module Import: ✅")
    print(f"   Quadrature: {'✅' if quad_ok else '❌'}")
    print(f"   Mean Field: {'✅' if mf_ok else '❌'}")
    print(f"   Command Line: {'✅' if cli_ok else '❌'}")

    if quad_ok and mf_ok and cli_ok:
        print("\n🎉 All smoke tests passed")
        print("   Run 'pytest' for the full suite, 'pytest -m slow' for the acceptance checks")
    else:
        print("\n⚠️  Some smoke tests failed, please check the EOC_LAB_* settings in .env")
        sys.exit(1)


if __name__ == "__main__":
    main()
