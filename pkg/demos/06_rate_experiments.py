"""A small end-to-end rate experiment with file emission.

Runs a reduced strong-rate sweep (64 paths, four epsilon levels), writes
rates.csv / slopes.json into demo_out/, and shows the dt-refinement sanity
check.  The plots package renders the CSV afterwards:

    mspde-plot --in demo_out/rates.csv --kind rate --out demo_out/rates.png
"""

from mspde import SimConfig, emit_outputs, run_strong_rate

cfg = SimConfig(
    model="linear", model_params={"c": (1.0, 0.7, 0.5, 0.35)}, n=8,
    epsilons=tuple(2.0**-k for k in range(3, 7)), T=0.5,
    gammas=(0.0, 0.25), qs=(2,), paths=64, seed=11, out_dir="demo_out",
)
report = run_strong_rate(cfg, dt_refine=True)

print("strong averaging error, fitted slopes (theory: 1 for squared error):")
for key, fit in report.fits.items():
    print(f"  {key}: slope {fit['slope']:.3f} +- {fit['slope_se']:.3f}, R^2 {fit['r2']:.4f}")

print("\ndt-refinement sanity (slope shift under halved macro step):")
for key, shift in report.meta["dt_refinement"].items():
    print(f"  {key}: {shift['slope']:.3f} -> {shift['slope_halved_dt']:.3f}"
          f" (shift {shift['shift']:+.3f})")

paths = emit_outputs(report, cfg.out_dir, cfg)
print("\nwrote:", paths["rates"], "and", paths["slopes"])
print("render with: mspde-plot --in demo_out/rates.csv --kind rate --out demo_out/rates.png")
