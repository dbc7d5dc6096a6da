# utils/report_writer.py

import json
import logging

# --- Helper Functions: Issue Map and Formatting ---

def _get_issue_description_map():
    """
    Known failure kinds with a description and a suggested remedy.
    Keys match TrackabilityReport.violation_kind values and the training failure kinds written by main.py.
    """
    return {
        'state_constraint': {'name': 'Reference Leaves the State Box', 'severity': 'High', 'description': 'A sampled reference value lies outside X, so no admissible trajectory can follow it.', 'solution': 'Train with the constrained modes (asymptotic or periodic) instead of unconstrained, or widen X if the physical limits allow it.'},
        'no_admissible_input': {'name': 'Reference Step Needs an Inadmissible Input', 'severity': 'High', 'description': 'Some step x_r(k) -> x_r(k+1) requires an input outside U; the reference moves faster than the system can.', 'solution': 'Use a constrained training mode so the derivative envelope is held inside the tube growth rates, or increase the sampling time.'},
        'not_periodic': {'name': 'Posterior Mean Is Not Periodic', 'severity': 'High', 'description': 'The posterior mean does not repeat with the learned period, so a one-period certificate does not extend to all time.', 'solution': 'Use the periodic kernel with a constant prior mean; check that theta3 is the intended period.'},
        'infeasible': {'name': 'Constrained Training Infeasible', 'severity': 'High', 'description': 'No hyperparameter candidate satisfied the trackability constraints within tolerance.', 'solution': 'Increase optimizer.multistart_count or optimizer.max_outer_iterations, loosen the theta boxes, or check that the data itself lies inside X.'},
        'non_termination': {'name': 'Certificate Not Reached', 'severity': 'Medium', 'description': 'The asymptotic trainer hit asymptotic.k_bar_max before every termination check held.', 'solution': 'Raise asymptotic.k_bar_max (or use asymptotic.k_bar_stride to move faster); see trace.csv for which check keeps failing.'},
        'closed_loop_infeasible': {'name': 'Closed-Loop OCP Infeasible', 'severity': 'High', 'description': 'The tracking MPC found no input sequence reaching the reference at the end of its horizon.', 'solution': 'Start closer to the reference (simulate.x0) or increase mpc.horizon.'},
    }


def _format_check_box(check_name, passed, details, solution_key=None, note=None):
    """Formats one check result as a text block; failed checks get the remedy from the issue map."""
    issue_map = _get_issue_description_map()
    box = []
    box.append(f"\n{check_name.upper()}")
    box.append("-----------------")
    box.append(f"STATUS: {'PASS' if passed else 'FAIL'}")

    if details:
        box.append(f"DETAILS: {details}")
    if note:
        box.append(f"NOTE: {note}")

    if not passed and solution_key in issue_map:
        issue = issue_map[solution_key]
        box.append(f"\nRECOMMENDATION: {issue['name']}")
        box.append(f"Severity: {issue['severity']}")
        box.append(f"Why: {issue['description']}")
        box.append(f"Solution: {issue['solution']}")

    box.append("_______________________________")
    return '\n'.join(box)


# --- Core Logic Functions ---

def describe_report(report):
    """JSON-ready dict of a TrackabilityReport, with the explanation of its violation kind."""
    data = report.model_dump(mode="json", exclude={"reference_inputs"})
    kind = data.get('violation_kind')
    if kind:
        data['explanation'] = _get_issue_description_map()[kind]['description']
    return data


def write_json_report(structured_report_data: dict, file_path: str):
    """Writes the full structured data to a JSON file."""
    try:
        with open(file_path, 'w', encoding='utf-8') as f:
            json.dump(structured_report_data, f, indent=4, sort_keys=True)
        logging.info(f"JSON Report written successfully to: {file_path}")
    except (OSError, TypeError, ValueError) as e:
        logging.error(f"Failed to write JSON report: {e}")
        raise


def write_summary_report(structured_report_data: dict, file_path: str):
    """Generates a plain text summary of a training (or check) run from its structured report."""
    details = structured_report_data.get('run_details', {})
    outcome = structured_report_data.get('outcome') or {}
    theta = outcome.get('theta_hat', {})

    summary_content = "--- REFERENCE TRAINING SUMMARY ---\n"
    summary_content += f"Mode: {details.get('mode', 'N/A')}\n"
    summary_content += f"Kernel: {details.get('kernel', 'N/A')}\n"
    summary_content += f"Data points: {details.get('data_points', 'N/A')}\n"
    summary_content += f"Seed: {details.get('rng_seed', 'N/A')}\n"
    if theta:
        summary_content += f"theta_hat: {', '.join(f'{v:.6g}' for v in theta.get('values', []))}\n"
        summary_content += f"noise variance: {theta.get('noise_variance', float('nan')):.3e}\n"
        summary_content += f"NLML: {outcome.get('nlml_value', float('nan')):.6g}\n"
    summary_content += "----------------------------------\n"

    for check in structured_report_data.get('checks', []):
        summary_content += _format_check_box(
            check['name'], check['passed'], check.get('details'), check.get('solution_key'), check.get('note'),
        ) + "\n"

    try:
        with open(file_path, 'w', encoding='utf-8') as f:
            f.write(summary_content)
        logging.info(f"Summary Report written successfully to: {file_path}")
    except OSError as e:
        logging.error(f"Failed to write summary report: {e}")
        raise
