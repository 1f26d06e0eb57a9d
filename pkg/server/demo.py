"""Demo script showing the screening pipeline on synthetic cells."""
from app.services.config import ScreeningConfig
from app.services.metrics import compute_metrics
from app.services.screening import screen_cell
from app.services.synthgen import GenSpec, generate_cell

# Two cells: one saturated at the ceiling, one with usable spread
specs = [
    ("saturated", GenSpec(n=524, accuracy=0.65, ceiling_mass=0.92, seed=1)),
    ("spread", GenSpec(n=524, accuracy=0.65, ceiling_mass=0.10, off_ceiling_low=0.0,
                       target_auroc=0.75, planted_logprob_r2=0.2, seed=2)),
]

config = ScreeningConfig()

print("=" * 80)
print("CONFIDENCE SCREEN - DEMO")
print("=" * 80)

for name, spec in specs:
    cell = generate_cell(spec)
    report = screen_cell(cell, config)
    metrics = compute_metrics(cell, config)
    table = report.indices.table

    print(f"\n{'='*80}")
    print(f"CELL: {name} (n={cell.n_total}, accuracy={spec.accuracy}, ceiling mass={spec.ceiling_mass})")
    print(f"{'='*80}")
    print(f"2x2 table (a, b, c, d): {table.as_tuple()}")
    print(f"Tier: {report.tier.value} (decisive step: {report.decisive_step})")
    for step in report.steps:
        observed = "-" if step.observed is None else f"{step.observed:.3f}"
        print(f"  {step.number}. {step.name:<15} {step.outcome.value:<13} observed={observed}  {step.detail}")

    print(f"\nCeiling rate: {metrics.ceiling_rate:.1%}")
    if metrics.auroc2 is not None:
        print(f"AUROC2: {metrics.auroc2.point:.3f} [{metrics.auroc2.lower:.3f}, {metrics.auroc2.upper:.3f}]")
    if metrics.ridge is not None and metrics.ridge.mean_r2 is not None:
        print(f"Ridge CV R^2 (logprob -> confidence): {metrics.ridge.mean_r2:.3f}")
    print(f"Split-half agreement: {metrics.split_half.agreement:.0%}")

print("\n" + "=" * 80)
print("COMMAND LINE")
print("=" * 80)
print("\npython -m app.cli simulate -o trials.jsonl        - Synthetic cells")
print("python -m app.cli collect --items items.jsonl ... - Elicit from an endpoint")
print("python -m app.cli screen trials.jsonl             - Validity tiers (JSON)")
print("python -m app.cli metrics trials.jsonl            - Ceiling, AUROC2, ridge, correlations")
print("python -m app.cli report report.json              - Text table from a JSON report")

print("\n" + "=" * 80)
print("API ENDPOINTS")
print("=" * 80)
print("\nPOST /api/screen    - Screen a batch of trials")
print("GET  /api/protocol  - Active thresholds and deviations")
print("GET  /api/health    - Health check")

print("\n" + "=" * 80)
