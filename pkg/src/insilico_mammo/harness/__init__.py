"""Dataset layout, file formats, sweeps and reports."""
from .layout import GridPoint, layout_path, lesion_present, parse_layout
from .locfile import read_loc, write_loc
from .mhd import read_mhd_raw, write_mhd_raw
from .report import results_table, timing_report, trend_plots
from .sweep import RunManifest, SweepGrid, SweepIOError, run_sweep

__all__ = ["GridPoint", "layout_path", "lesion_present", "parse_layout", "read_loc", "write_loc",
           "read_mhd_raw", "write_mhd_raw", "results_table", "timing_report", "trend_plots",
           "RunManifest", "SweepGrid", "SweepIOError", "run_sweep"]
