"""
eoc-lab command line

Usage:
    eoc-lab eoc --activation swish --sigma-b-grid 0.1:0.5:5
    eoc-lab fixed-point --activation relu --sigma-b 1 --sigma-w 1
    eoc-lab corr-fn --activation swish --sigma-b 0.2 --on-eoc --grid 100
    eoc-lab iterate --activation tanh --sigma-b 1 --sigma-w 1 --c0 0.1 --depth 50
    eoc-lab depth-scales --activation tanh --sigma-b 1 --sigma-w 1
    eoc-lab contraction --activation relu --sigma-b 0 --sigma-w 1
    eoc-lab relu-rate --depth 100000
    eoc-lab check --activation elu --sigma-b-grid 0.05:0.5:10
    eoc-lab simulate --activation relu --sigma-b 0 --sigma-w 1.4142135623730951 --widths 500 --depth 10 --reps 50
    eoc-lab sup-dev --activation swish --sigma-b-grid 0.1:0.5:5
    eoc-lab var-fn --activation elu --sigma-b 0.2 --sigma-w 1.23 --grid 0:2:41

CSV and JSON go to stdout, logs and error diagnostics to stderr.
Exit codes: 0 success, 2 usage or domain error, 3 numeric failure.
"""

import argparse
import logging
import math
import sys
from typing import List, Optional, Sequence, TextIO, Tuple

import numpy as np

from ..core.activations import ACTIVATION_NAMES, Activation, make_activation
from ..core.config import LOG_FORMAT, LOG_LEVEL
from ..core.exceptions import ConfigurationError, DomainError, EocLabError, NumericError
from ..core.models import KernelState, MeanFieldParams, PropagationMode, QuadratureConfig, SimConfig
from ..services.closedform_service import hardtanh_variance_map, relu_rate_constant, relu_rate_profile
from ..services.conditions_service import condition_checker
from ..services.eoc_service import eoc_solver
from ..services.meanfield_service import meanfield_engine
from ..services.quadrature_service import quadrature
from ..services.simulation_service import FieldGrid, input_pair, network_simulator, normalize_inputs
from .writers import frame, write_csv, write_json

logger = logging.getLogger(__name__)


def parse_grid(spec: str) -> List[float]:
    """LO:HI:N, both endpoints included"""
    parts = spec.split(':')
    if len(parts) != 3:
        raise ConfigurationError(f"grid must look like LO:HI:N, got {spec!r}", grid=spec)
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ConfigurationError(f"grid must look like LO:HI:N, got {spec!r}", grid=spec)
    if n < 1 or (n == 1 and lo != hi) or hi < lo:
        raise ConfigurationError(f"grid needs N >= 1 and LO <= HI (N = 1 only when LO = HI), got {spec!r}",
                                 grid=spec)
    return [float(v) for v in np.linspace(lo, hi, n)]


def parse_widths(spec: str, depth: Optional[int]) -> Tuple[int, ...]:
    """A single width repeated ``depth`` times, or a comma list N_1,...,N_L"""
    try:
        widths = tuple(int(w) for w in spec.split(','))
    except ValueError:
        raise ConfigurationError(f"widths must be integers, got {spec!r}")
    if len(widths) == 1 and depth is not None:
        return widths * depth
    if depth is not None and len(widths) != depth:
        raise ConfigurationError(f"{len(widths)} widths given for depth {depth}")
    return widths


def log_rows(depth: int) -> List[int]:
    """1..9, 10..90, 100..900, ... up to depth, always ending at depth"""
    layers = sorted({m * 10 ** e for e in range(int(math.log10(depth)) + 1) for m in range(1, 10)
                     if m * 10 ** e <= depth} | {depth})
    return layers


def _params(args) -> MeanFieldParams:
    if args.sigma_w is None:
        raise ConfigurationError("--sigma-w is required unless --on-eoc is given")
    return MeanFieldParams.from_sigmas(args.sigma_b, args.sigma_w)


def _fixed_q(p: MeanFieldParams, phi: Activation, cfg: QuadratureConfig, x0: Optional[float] = None) -> float:
    result = (meanfield_engine.minimal_fixed_point(p, phi, cfg) if x0 is None
              else meanfield_engine.variance_fixed_point(p, phi, x0, cfg))
    if not result.converged:
        raise NumericError(f"variance iteration {result.status.value} for {phi.id}",
                           status=result.status.value, q=result.q, iters=result.iters)
    return result.q


def _eoc_params(args, phi: Activation, cfg: QuadratureConfig) -> Tuple[MeanFieldParams, float]:
    point = eoc_solver.eoc_solve(args.sigma_b, phi, cfg)
    if not point.found:
        raise DomainError(f"no EOC point for {phi.id} at sigma_b = {args.sigma_b}",
                          reason=point.diagnostics.get('reason'))
    return point.params, point.q


# ---- subcommands ----------------------------------------------------------

def cmd_eoc(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    points = eoc_solver.eoc_curve(parse_grid(args.sigma_b_grid), phi, cfg)
    write_json(points, out)


def cmd_fixed_point(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    p = _params(args)
    result = (meanfield_engine.minimal_fixed_point(p, phi, cfg) if args.x0 is None
              else meanfield_engine.variance_fixed_point(p, phi, args.x0, cfg))
    write_json(result, out)


def cmd_corr_fn(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    if args.on_eoc:
        p, q = _eoc_params(args, phi, cfg)
    else:
        p = _params(args)
        q = args.q if args.q is not None else _fixed_q(p, phi, cfg)
    if args.grid < 1:
        raise ConfigurationError(f"--grid must be >= 1, got {args.grid}")
    rows = []
    for k in range(args.grid):
        x = k / args.grid
        second, path = meanfield_engine.correlation_map_second_with_path(x, q, p, phi, cfg)
        rows.append((x, meanfield_engine.correlation_map(x, q, p, phi, cfg),
                     meanfield_engine.correlation_map_derivative(x, q, p, phi, cfg), second, path))
    write_csv(frame(rows, ['x', 'f', 'f_prime', 'f_second', 'f_second_path']), out)


def cmd_iterate(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    if args.on_eoc:
        p, q = _eoc_params(args, phi, cfg)
    else:
        p = _params(args)
        q = None
    q_a = args.qa if args.qa is not None else (q if q is not None else 1.0)
    q_b = args.qb if args.qb is not None else q_a
    mode = PropagationMode.LAYERWISE if args.layerwise else PropagationMode.HOMOGENEOUS
    trajectory = meanfield_engine.iterate_kernel(KernelState(layer=1, q_a=q_a, q_b=q_b, c_ab=args.c0),
                                                 args.depth, p, phi, mode, cfg)
    rows = [(s.layer, s.q_a, s.q_b, s.c_ab, s.gap) for s in trajectory]
    write_csv(frame(rows, ['l', 'q_a', 'q_b', 'c', 'gap']), out)
    if trajectory.truncated:
        raise NumericError(f"variance diverged after layer {len(trajectory)}", layers=len(trajectory))


def cmd_depth_scales(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    p = _params(args)
    q = args.q if args.q is not None else _fixed_q(p, phi, cfg)
    scales = meanfield_engine.depth_scales(q, p, phi, cfg)
    write_json({**scales.to_dict(), 'q': q}, out)


def cmd_relu_rate(args, cfg, out: TextIO):
    profile = relu_rate_profile(args.depth, args.c0)
    wanted = set(log_rows(args.depth)) if args.rows == 'log' else None
    limit = relu_rate_constant()
    rows = [(l, scaled, gap, limit) for l, gap, scaled in profile if wanted is None or l in wanted]
    write_csv(frame(rows, ['l', 'l2_gap', 'gap', 'limit']), out)


def cmd_contraction(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    if args.delta <= 0:
        raise ConfigurationError(f"--delta must be > 0, got {args.delta}")
    write_json(meanfield_engine.contraction_certificate(_params(args), phi, args.delta, cfg=cfg), out)


def cmd_check(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    report = condition_checker.check_prop4(phi, parse_grid(args.sigma_b_grid), args.x_grid, cfg)
    write_json(report, out)


def cmd_sup_dev(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    rows = []
    for point in eoc_solver.eoc_curve(parse_grid(args.sigma_b_grid), phi, cfg):
        if not point.found or not point.q > 0:
            logger.warning(f"sigma_b = {point.sigma_b}: no EOC point, row skipped")
            continue
        dev = condition_checker.sup_deviation(phi, point, args.x_grid, cfg)
        rows.append((point.sigma_b, dev.dev, dev.bound, dev.f_zero))
    write_csv(frame(rows, ['sigma_b', 'sup_dev', 'bound', 'f_zero']), out)


def cmd_var_fn(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    rows = meanfield_engine.variance_curve(_params(args), phi, parse_grid(args.grid), cfg)
    write_csv(frame(rows, ['x', 'F', 'F_prime']), out)


def cmd_hardtanh_var(args, cfg, out: TextIO):
    p = MeanFieldParams.from_sigmas(args.sigma_b, args.sigma_w)
    phi = make_activation('hard_tanh')
    rows = []
    for x in parse_grid(args.grid):
        value = hardtanh_variance_map(x, p)
        rows.append((x, value.paper, value.exact, meanfield_engine.variance_map(x, p, phi, cfg)))
    write_csv(frame(rows, ['x', 'paper', 'exact', 'quadrature']), out)


def cmd_tail_exponent(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    try:
        lo, hi = (float(v) for v in args.x_range.split(':'))
    except ValueError:
        raise ConfigurationError(f"--x-range must look like LO:HI, got {args.x_range!r}")
    write_json(condition_checker.prop7_tail_exponent(phi, (lo, hi), cfg=cfg)._asdict(), out)


def cmd_simulate(args, cfg, out: TextIO):
    phi = make_activation(args.activation)
    p = _params(args)
    input_dim = 2 if args.field else args.input_dim
    sim = SimConfig(widths=parse_widths(args.widths, args.depth), input_dim=input_dim, params=p,
                    activation=phi, replications=args.reps, seed=args.seed)

    if args.field:
        axis = parse_grid(args.field)
        grid = FieldGrid.square(axis[0], axis[-1], len(axis))
        fields = network_simulator.output_fields(sim, grid)
        if args.field_summary:
            write_json(network_simulator.field_summary(fields, grid), out)
            return
        points = grid.points
        write_csv(frame(zip(points[:, 0], points[:, 1], fields[0].ravel()), ['x', 'y', 'output']), out)
        return

    if args.c0 is not None:
        inputs = input_pair(p, input_dim, args.q1, args.c0)
    else:
        inputs = normalize_inputs(np.ones((1, input_dim)), p, args.q1)
    result = network_simulator.simulate(sim, inputs)
    rows = [(m.layer, m.q_a, m.q_a_se, m.q_b, m.q_b_se, m.c_ab, m.c_ab_se) for m in result.layers]
    write_csv(frame(rows, ['l', 'q_a', 'q_a_se', 'q_b', 'q_b_se', 'c', 'c_se']), out)
    if result.aborted:
        raise NumericError(f"{len(result.aborted)} replications aborted", aborted=len(result.aborted))


# ---- parser ---------------------------------------------------------------

def _add_activation(p: argparse.ArgumentParser):
    p.add_argument('--activation', '-a', required=True, help=f"one of {', '.join(ACTIVATION_NAMES)}")


def _add_params(p: argparse.ArgumentParser, sigma_w_required: bool = False):
    p.add_argument('--sigma-b', type=float, default=0.0, help='bias standard deviation')
    p.add_argument('--sigma-w', type=float, default=None, required=sigma_w_required,
                   help='weight standard deviation')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='eoc-lab', description='Mean-field analysis of wide random networks')
    parser.add_argument('--quad-order', type=int, default=None, help='Gauss-Hermite order (default from env)')
    parser.add_argument('--log-level', default=LOG_LEVEL, help='logging level written to stderr')
    subparsers = parser.add_subparsers(dest='command')

    # --- eoc ---
    eoc_parser = subparsers.add_parser('eoc', help='EOC points over a sigma_b grid (JSON)')
    _add_activation(eoc_parser)
    eoc_parser.add_argument('--sigma-b-grid', required=True, help='LO:HI:N')
    eoc_parser.set_defaults(handler=cmd_eoc)

    # --- fixed-point ---
    fp_parser = subparsers.add_parser('fixed-point', help='Fixed point of the variance map (JSON)')
    _add_activation(fp_parser)
    _add_params(fp_parser, sigma_w_required=True)
    fp_parser.add_argument('--x0', type=float, default=None, help='start of the iteration (default: minimal)')
    fp_parser.set_defaults(handler=cmd_fixed_point)

    # --- corr-fn ---
    corr_parser = subparsers.add_parser('corr-fn', help='f, f\' and f\'\' on x = k/N (CSV)')
    _add_activation(corr_parser)
    _add_params(corr_parser)
    corr_parser.add_argument('--on-eoc', action='store_true', help='solve sigma_w and q on the EOC')
    corr_parser.add_argument('--q', type=float, default=None, help='variance (default: minimal fixed point)')
    corr_parser.add_argument('--grid', type=int, required=True, help='number of x points in [0, 1)')
    corr_parser.set_defaults(handler=cmd_corr_fn)

    # --- iterate ---
    it_parser = subparsers.add_parser('iterate', help='Kernel recursion over depth (CSV)')
    _add_activation(it_parser)
    _add_params(it_parser)
    it_parser.add_argument('--on-eoc', action='store_true', help='solve sigma_w on the EOC')
    it_parser.add_argument('--c0', type=float, required=True, help='first-layer correlation')
    it_parser.add_argument('--qa', type=float, default=None, help='first-layer variance of input a')
    it_parser.add_argument('--qb', type=float, default=None, help='first-layer variance of input b')
    it_parser.add_argument('--depth', type=int, required=True)
    it_parser.add_argument('--layerwise', action='store_true', help='propagate (q_a, q_b, c) jointly')
    it_parser.set_defaults(handler=cmd_iterate)

    # --- depth-scales ---
    ds_parser = subparsers.add_parser('depth-scales', help='chi1, alpha and depth scales (JSON)')
    _add_activation(ds_parser)
    _add_params(ds_parser, sigma_w_required=True)
    ds_parser.add_argument('--q', type=float, default=None, help='variance (default: minimal fixed point)')
    ds_parser.set_defaults(handler=cmd_depth_scales)

    # --- relu-rate ---
    rr_parser = subparsers.add_parser('relu-rate', help='l^2 (1 - c^l) for ReLU on the EOC (CSV)')
    rr_parser.add_argument('--depth', type=int, required=True)
    rr_parser.add_argument('--c0', type=float, default=0.1)
    rr_parser.add_argument('--rows', choices=['log', 'all'], default='log')
    rr_parser.set_defaults(handler=cmd_relu_rate)

    # --- contraction ---
    ct_parser = subparsers.add_parser('contraction', help='M_phi, C_phi,delta and the certified domains (JSON)')
    _add_activation(ct_parser)
    _add_params(ct_parser, sigma_w_required=True)
    ct_parser.add_argument('--delta', type=float, default=0.5)
    ct_parser.set_defaults(handler=cmd_contraction)

    # --- check ---
    check_parser = subparsers.add_parser('check', help='Sufficient-condition report (JSON)')
    _add_activation(check_parser)
    check_parser.add_argument('--sigma-b-grid', required=True, help='LO:HI:N')
    check_parser.add_argument('--x-grid', type=int, default=101)
    check_parser.set_defaults(handler=cmd_check)

    # --- simulate ---
    sim_parser = subparsers.add_parser('simulate', help='Finite-width networks (CSV moments, field or JSON summary)')
    _add_activation(sim_parser)
    _add_params(sim_parser, sigma_w_required=True)
    sim_parser.add_argument('--widths', required=True, help='N or N_1,...,N_L')
    sim_parser.add_argument('--depth', type=int, default=None)
    sim_parser.add_argument('--reps', type=int, default=1)
    sim_parser.add_argument('--seed', type=int, default=0)
    sim_parser.add_argument('--input-dim', type=int, default=2)
    sim_parser.add_argument('--q1', type=float, default=1.0, help='first-layer variance of the inputs')
    sim_parser.add_argument('--c0', type=float, default=None, help='simulate two inputs with this correlation')
    sim_parser.add_argument('--field', default=None, help='LO:HI:N square grid of 2-D inputs')
    sim_parser.add_argument('--field-summary', action='store_true', help='JSON summary instead of the field')
    sim_parser.set_defaults(handler=cmd_simulate)

    # --- sup-dev ---
    sd_parser = subparsers.add_parser('sup-dev', help='sup |f(x) - x| along the EOC (CSV)')
    _add_activation(sd_parser)
    sd_parser.add_argument('--sigma-b-grid', required=True, help='LO:HI:N')
    sd_parser.add_argument('--x-grid', type=int, default=101)
    sd_parser.set_defaults(handler=cmd_sup_dev)

    # --- var-fn ---
    vf_parser = subparsers.add_parser('var-fn', help='F and F\' on a grid (CSV)')
    _add_activation(vf_parser)
    _add_params(vf_parser, sigma_w_required=True)
    vf_parser.add_argument('--grid', required=True, help='LO:HI:N')
    vf_parser.set_defaults(handler=cmd_var_fn)

    # --- hardtanh-var ---
    ht_parser = subparsers.add_parser('hardtanh-var', help='Hard-Tanh variance map: displayed, exact, quadrature')
    ht_parser.add_argument('--sigma-b', type=float, default=0.0)
    ht_parser.add_argument('--sigma-w', type=float, default=1.0)
    ht_parser.add_argument('--grid', required=True, help='LO:HI:N with LO > 0')
    ht_parser.set_defaults(handler=cmd_hardtanh_var)

    # --- tail-exponent ---
    te_parser = subparsers.add_parser('tail-exponent', help='Empirical decay exponent of E[phi\'(xZ)^2] (JSON)')
    _add_activation(te_parser)
    te_parser.add_argument('--x-range', default='10:500', help='LO:HI with 1 < LO < HI < 1000')
    te_parser.set_defaults(handler=cmd_tail_exponent)

    return parser


def _configure_logging(level: str, stream: TextIO) -> Tuple[logging.Handler, int]:
    """Attach a stderr handler to the root logger; returns it with the previous root level"""
    root = logging.getLogger()
    previous = root.level
    handler = logging.StreamHandler(stream)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.WARNING))
    return handler, previous


def run(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None,
        stderr: Optional[TextIO] = None) -> int:
    """Parse ``argv``, run the subcommand and return the process exit code"""
    out = stdout or sys.stdout
    err = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_help(err)
        return 2

    handler, previous = _configure_logging(args.log_level, err)
    try:
        cfg = QuadratureConfig(order=args.quad_order) if args.quad_order is not None else quadrature.cfg
        args.handler(args, cfg, out)
    except EocLabError as e:
        logger.error(f"{args.command} failed: {e.message}")
        write_json(e.to_dict(), err)
        return e.exit_code
    finally:
        logging.getLogger().removeHandler(handler)
        logging.getLogger().setLevel(previous)
    return 0


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
