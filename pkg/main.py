# main.py

import argparse
import json
import logging
import os
import sys

import numpy as np

from checks.reachability import check_trackable, one_step_reachable
from controller.closed_loop import simulate_closed_loop
from gp.kernels import Hyperparameters
from gp.posterior import build_posterior, posterior_mean, predict
from training.asymptotic import certify_all_time, train_asymptotic
from training.hyperopt import minimize_nlml
from training.periodic import certify_periodic, train_periodic
from utils.config import TrainingMode, load_config
from utils.data_io import (
    ingest_csv,
    ingest_reference,
    load_tube_table,
    write_csv,
    write_dataset,
)
from utils.errors import (
    ConfigurationError,
    DataError,
    InfeasibleTrainingError,
    NonTerminationError,
    PreconditionError,
    TrackingGPError,
)
from utils.generator import generate_dataset
from utils.report_writer import describe_report, write_json_report, write_summary_report

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2
EXIT_CHECK_FAILED = 3

# --- Artifact file names inside the output directory ---
ARTIFACTS = {
    'data': 'training_data.csv',
    'outcome': 'outcome.json',
    'summary': 'summary.txt',
    'trace': 'trace.csv',
    'intervals': 'intervals.csv',
    'predictions': 'predictions.csv',
    'check': 'check_report.json',
    'simulation': 'simulation.csv',
}

PREDICTION_HEADER = ("t", "mean", "variance", "mean_bound", "deriv_bound", "tube_lower", "tube_upper")
SIMULATION_HEADER = ("k", "t", "x", "u", "x_ref", "u_ref", "error", "feasible")
INTERVAL_HEADER = ("index", "t_start", "t_end", "region_lo", "region_hi", "deriv_min", "deriv_max",
                   "tau_lower", "tau_upper", "violation")


def _artifact(out_dir, name):
    return os.path.join(out_dir, ARTIFACTS[name])


def _check_entry(name, passed, details=None, solution_key=None, note=None):
    return {'name': name, 'passed': bool(passed), 'details': details, 'solution_key': solution_key, 'note': note}


# --- Shared steps ---

def _load_training_data(args, out_dir):
    path = args.data or _artifact(out_dir, 'data')
    if not os.path.exists(path):
        raise DataError(f"no training data: pass --data or run 'generate' first (looked for {path})")
    return ingest_csv(path)


def _tube_table(config):
    return load_tube_table(config.tube.table) if config.tube.table else None


def write_predictions(path, sys_, posterior, horizon_steps):
    """Prediction CSV over k = 0..horizon_steps; the tube columns hold X intersected with the one-step tube."""
    times = sys_.sampling_time * np.arange(horizon_steps + 1)
    records = predict(posterior, times)
    means = np.array([r.mean for r in records])
    tube_lower = np.full(means.size, sys_.x_lo)
    tube_upper = np.full(means.size, sys_.x_hi)
    if means.size > 1:
        lo, hi = one_step_reachable(sys_, means[:-1])
        tube_lower[1:] = np.maximum(tube_lower[1:], lo)
        tube_upper[1:] = np.minimum(tube_upper[1:], hi)
    rows = [
        (r.t, r.mean, r.variance, r.mean_bound, r.derivative_bound, lo_k, hi_k)
        for r, lo_k, hi_k in zip(records, tube_lower, tube_upper)
    ]
    write_csv(path, PREDICTION_HEADER, rows)


def _run_details(config, args, data):
    return {
        'mode': config.mode.value,
        'kernel': config.kernel.family.value,
        'mean_constant': config.mean.constant_value,
        'data_points': len(data),
        'rng_seed': config.rng_seed,
        'config_path': args.config,
    }


def _load_outcome(config, out_dir):
    """Rebuilds the trained posterior from outcome.json and the copied training data."""
    path = _artifact(out_dir, 'outcome')
    if not os.path.exists(path):
        raise PreconditionError(f"no trained artifacts in {out_dir}: run 'train' first")
    with open(path, 'r', encoding='utf-8') as f:
        report = json.load(f)
    if report.get('outcome') is None:
        raise PreconditionError(f"{path} holds no trained hyperparameters ({report.get('error')})")
    if report['run_details']['kernel'] != config.kernel.family.value:
        raise ConfigurationError(
            f"artifacts were trained with the {report['run_details']['kernel']} kernel, config says {config.kernel.family.value}"
        )
    theta = Hyperparameters(**report['outcome']['theta_hat'])
    data = ingest_csv(_artifact(out_dir, 'data'))
    return report, build_posterior(config.kernel.spec, config.mean, theta, data)


# --- Commands ---

def cmd_generate(config, args, out_dir):
    data = generate_dataset(config.generator, seed=config.rng_seed)
    path = args.data or _artifact(out_dir, 'data')
    write_dataset(path, data)
    print(f"\nTraining data saved to: {path}")
    return EXIT_OK


def _train_asymptotic(config, data, out_dir):
    sys_ = config.system
    try:
        cert = train_asymptotic(sys_, data, config.asymptotic_config(), config.kernel.spec, config.mean,
                                tube_table=_tube_table(config))
    except (InfeasibleTrainingError, NonTerminationError) as e:
        write_csv(_artifact(out_dir, 'trace'), _trace_header(e.trace), [r.as_row() for r in e.trace])
        kind = 'infeasible' if isinstance(e, InfeasibleTrainingError) else 'non_termination'
        outcome = getattr(e, 'outcome', None)
        checks = [_check_entry('Asymptotic certificate', False, str(e), kind)]
        return EXIT_INFEASIBLE, outcome, {'certified': False, 'error': str(e), 'checks': checks}

    write_csv(_artifact(out_dir, 'trace'), _trace_header(cert.trace), [r.as_row() for r in cert.trace])
    posterior = build_posterior(config.kernel.spec, config.mean, cert.theta_hat, data)
    horizon = config.asymptotic.horizon_factor * cert.k_bar_final
    replay = certify_all_time(cert, sys_, posterior, horizon)
    checks = [
        _check_entry('Asymptotic certificate', True,
                     f"terminated at k_bar={cert.k_bar_final} with m_bar={cert.mean_bound_at_k_bar:.4g}, "
                     f"mdot_bar={cert.mean_dt_bound_at_k_bar:.4g}, tau=[{cert.tube.lower_rate:.4g}, {cert.tube.upper_rate:.4g}]"),
        _check_entry(f'Trackability replay over {horizon} steps', replay.trackable, None,
                     replay.violation_kind.value if replay.violation_kind else None, replay.note),
    ]
    certificate = cert.model_dump(mode='json', exclude={'trace', 'outcome'})
    return EXIT_OK, cert.outcome, {'certified': replay.trackable, 'certificate': certificate, 'checks': checks}


def _train_periodic(config, data, out_dir):
    sys_ = config.system
    outcome, bounds = train_periodic(sys_, data, config.periodic_config(), config.kernel.spec, config.mean,
                                     tube_table=_tube_table(config))
    write_csv(_artifact(out_dir, 'intervals'), INTERVAL_HEADER, [row.as_row() for row in bounds.intervals])
    summary = bounds.model_dump(mode='json', exclude={'intervals'})
    if not outcome.feasible:
        checks = [_check_entry('Periodic constraints', False, f"max violation {outcome.max_violation:.3e}", 'infeasible')]
        return EXIT_INFEASIBLE, outcome, {'certified': False, 'interval_bounds': summary, 'checks': checks}

    posterior = build_posterior(config.kernel.spec, config.mean, outcome.theta_hat, data)
    replay = certify_periodic(outcome, sys_, posterior, config.periodic.periods)
    checks = [
        _check_entry('Periodic constraints', True,
                     f"{len(bounds.intervals)} intervals, mean range [{bounds.mean_min:.4g}, {bounds.mean_max:.4g}], "
                     f"slack {bounds.certification_slack:.3e}"),
        _check_entry(f'Trackability replay over {config.periodic.periods} periods', replay.trackable, None,
                     replay.violation_kind.value if replay.violation_kind else None, replay.note),
    ]
    return EXIT_OK, outcome, {'certified': replay.trackable, 'interval_bounds': summary, 'checks': checks}


def _train_unconstrained(config, data, out_dir):
    outcome = minimize_nlml(config.kernel.spec, config.mean, data, config.optimizer_config())
    posterior = build_posterior(config.kernel.spec, config.mean, outcome.theta_hat, data)
    steps = config.prediction.horizon_steps
    replay = check_trackable(config.system, posterior_mean(posterior, config.system.sampling_time * np.arange(steps + 1)))
    checks = [_check_entry(f'Trackability over {steps} steps (informational)', replay.trackable, None,
                           replay.violation_kind.value if replay.violation_kind else None, replay.note)]
    return EXIT_OK, outcome, {'certified': False, 'checks': checks}


def _trace_header(trace):
    return tuple(trace[0].as_row().keys()) if trace else ("k_bar",)


TRAINERS = {
    TrainingMode.ASYMPTOTIC: _train_asymptotic,
    TrainingMode.PERIODIC: _train_periodic,
    TrainingMode.UNCONSTRAINED: _train_unconstrained,
}


def cmd_train(config, args, out_dir):
    data = _load_training_data(args, out_dir)
    write_dataset(_artifact(out_dir, 'data'), data)

    print(f"\nTraining {config.mode.value} reference on {len(data)} points...")
    code, outcome, extra = TRAINERS[config.mode](config, data, out_dir)

    report = {
        'run_details': _run_details(config, args, data),
        'system': config.system.model_dump(mode='json'),
        'outcome': outcome.model_dump(mode='json') if outcome is not None else None,
        'certified': False,
        'error': None,
        'checks': [],
    }
    report.update(extra)
    write_json_report(report, _artifact(out_dir, 'outcome'))
    write_summary_report(report, _artifact(out_dir, 'summary'))

    if outcome is not None:
        posterior = build_posterior(config.kernel.spec, config.mean, outcome.theta_hat, data)
        write_predictions(_artifact(out_dir, 'predictions'), config.system, posterior, config.prediction.horizon_steps)

    print(f"\nArtifacts saved to: {out_dir}")
    print(f"Feasible: {outcome.feasible if outcome is not None else False} | Certified: {report['certified']}")
    return code


def cmd_predict(config, args, out_dir):
    _, posterior = _load_outcome(config, out_dir)
    path = _artifact(out_dir, 'predictions')
    write_predictions(path, config.system, posterior, config.prediction.horizon_steps)
    print(f"\nPredictions saved to: {path}")
    return EXIT_OK


def cmd_check(config, args, out_dir):
    path = args.data or _artifact(out_dir, 'predictions')
    t, values = ingest_reference(path)
    if t.size > 1 and not np.allclose(np.diff(t), config.system.sampling_time, rtol=1e-6, atol=1e-12):
        logging.warning(f"reference in {path} is not sampled at T_s={config.system.sampling_time}; checking samples as given")
    report = check_trackable(config.system, values)
    structured = {'reference': path, 'report': describe_report(report)}
    write_json_report(structured, _artifact(out_dir, 'check'))
    print(report.note)
    return EXIT_OK if report.trackable else EXIT_CHECK_FAILED


def cmd_simulate(config, args, out_dir):
    report, posterior = _load_outcome(config, out_dir)
    if not report.get('certified'):
        raise PreconditionError("the trained reference is not certified trackable; refusing to simulate")
    x0 = config.simulate.x0 if config.simulate.x0 is not None else posterior_mean(posterior, 0.0)
    trace = simulate_closed_loop(config.system, posterior, x0, config.simulate.steps, config.mpc)
    path = _artifact(out_dir, 'simulation')
    write_csv(path, SIMULATION_HEADER, [row.as_row() for row in trace.rows])
    print(f"\nClosed-loop trace saved to: {path}")
    print(f"Steps: {len(trace.rows)}/{config.simulate.steps} | Max tracking error: {trace.max_error:.3e}")
    return EXIT_OK if trace.completed else EXIT_INFEASIBLE


COMMANDS = {
    'generate': cmd_generate,
    'train': cmd_train,
    'predict': cmd_predict,
    'check': cmd_check,
    'simulate': cmd_simulate,
}


def build_parser():
    parser = argparse.ArgumentParser(description="Learn trackable GP references and replay them in closed loop.")
    parser.add_argument('command', choices=sorted(COMMANDS))
    parser.add_argument('--config', required=True, help="experiment config file")
    parser.add_argument('--data', help="data CSV (generate: output path; train: t,y input; check: reference to check)")
    parser.add_argument('--out', help="output directory (overrides output_dir)")
    parser.add_argument('--seed', type=int, help="overrides rng_seed")
    parser.add_argument('--verbose', action='store_true', help="debug logging")
    return parser


# --- Main Execution Flow ---
def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        config = load_config(args.config, seed_override=args.seed)
        out_dir = args.out or config.output_dir
        os.makedirs(out_dir, exist_ok=True)
        return COMMANDS[args.command](config, args, out_dir)
    except TrackingGPError as e:
        print(f"Error: {e}")
        return EXIT_ERROR
    except Exception as e:
        logging.exception("unexpected failure")
        print(f"Error: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
