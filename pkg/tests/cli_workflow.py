"""Run every CLI subcommand into a directory and collect the outputs."""

from pathlib import Path

from mouselift.pipeline.cli import main


def run(argv) -> int:
    return main([str(a) for a in argv])


def run_all(workdir: Path, threads: int, seed: int = 7) -> dict[str, bytes]:
    w = Path(workdir)
    common = ["--seed", seed, "--threads", threads]
    steps = [
        ["synth", "--out-dir", w / "short", "--frames", 6, "--noise", 0.5, *common],
        ["synth", "--out-dir", w / "long", "--frames", 96, *common],
        ["synth", "--out-dir", w / "rig", "--frames", 6, "--layout", "rig", "--noise", 1.0, *common],
        ["triangulate", "--labels", w / "rig/labels.json", "--calibration", w / "rig/calibration.json",
         "--out", w / "tri.json", "--rms-csv", w / "rms.csv", *common],
        ["fit-prior", w / "long/truth.json", w / "tri.json", "--out", w / "prior.json", "--components", 3, *common],
        ["fit-pose", "--keypoints", w / "short/observed.json", "--calibration", w / "short/calibration.json",
         "--prior", w / "prior.json", "--out", w / "fit.json", *common],
        ["eval-oks", "--pred", w / "short/observed.json", "--truth", w / "short/observed.json",
         "--out", w / "oks.csv", *common],
        ["eval-3d", "--pred", w / "fit.json", "--truth", w / "short/truth.json", "--out", w / "err3d.csv", *common],
        ["gait", "--track", w / "long/truth.json", "--out", w / "gait.csv", "--series", w / "series.csv",
         "--spectrum", w / "spectrum.csv", *common],
        ["export-features", "--track", w / "long/truth.json", "--representation", "3d_angles", "--window", 1.0,
         "--out", w / "features.csv", *common],
    ]
    for argv in steps:
        code = run(argv)
        if code != 0:
            raise AssertionError(f"{argv[0]} exited with {code}")
    return {str(p.relative_to(w)): p.read_bytes() for p in sorted(w.rglob("*")) if p.is_file()}
