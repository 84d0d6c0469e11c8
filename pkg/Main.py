################################################################################
# FILE: Main.py
# LOCATION: Root directory
################################################################################

import os
import sys
from pathlib import Path

import streamlit as st
from dotenv import load_dotenv

sys.path.append(str(Path(__file__).resolve().parent))
from dashboard.dashboard import (
    list_run_dirs,
    load_failures,
    load_gp_is_summaries,
    load_reports,
    load_summary,
)

# Page configuration
st.set_page_config(
    page_title="GP Merge Results",
    page_icon="📈",
    layout="wide",
    initial_sidebar_state="expanded"
)


@st.cache_data
def cached_table(loader_name: str, run_dir: str):
    """Load one results table with caching"""
    loaders = {
        "summary": load_summary,
        "reports": load_reports,
        "gp_is": load_gp_is_summaries,
    }
    return loaders[loader_name](run_dir)


def display_summary(run_dir: Path):
    """Per-algorithm mean and sd over repetitions"""
    summary = cached_table("summary", str(run_dir))
    if summary.empty:
        st.warning("⚠️ No summary.csv in this run yet.")
        return
    st.markdown("### 📊 Mean discrepancy per algorithm")
    st.dataframe(summary, width="stretch", hide_index=True)


def display_reports(run_dir: Path):
    """Every (algorithm, repetition) report"""
    reports = cached_table("reports", str(run_dir))
    if reports.empty:
        return
    algorithms = sorted(reports["algorithm"].unique())
    chosen = st.multiselect("Algorithms", algorithms, default=algorithms)
    st.dataframe(reports[reports["algorithm"].isin(chosen)], width="stretch", hide_index=True)


def display_gp_is(run_dir: Path):
    """GP-IS functional estimates with realisation quantiles"""
    table = cached_table("gp_is", str(run_dir))
    if table.empty:
        st.info("No GP-IS summaries in this run.")
        return
    functionals = sorted(table["functional"].unique())
    functional = st.selectbox("Functional", functionals)
    st.dataframe(table[table["functional"] == functional], width="stretch", hide_index=True)


def main():
    load_dotenv(".env")
    results_root = os.getenv("GPMERGE_OUTPUT_DIR", "results")

    st.title("📈 GP Merge Experiment Results")

    with st.sidebar:
        st.markdown("### ℹ️ About")
        st.markdown("""
        Divide-and-conquer posterior inference:
        - HMC on each data batch
        - A Gaussian-process surrogate per batch
        - Merged by GP-HMC, DIS or GP-IS and compared with consensus
        """)
        results_root = st.text_input("Results directory", value=results_root)
        if st.button("🔄 Reload", width="stretch"):
            st.cache_data.clear()

    run_dirs = list_run_dirs(results_root)
    if not run_dirs:
        st.warning(f"⚠️ No runs found under '{results_root}'. Start one from the Run Experiment page.")
        return

    run_dir = st.selectbox("Run", run_dirs, format_func=lambda p: str(p))

    failures = load_failures(run_dir)
    if failures:
        st.error(f"❌ {len(failures)} repetition(s) failed")
        st.json(failures, expanded=False)

    display_summary(run_dir)

    with st.expander("📋 Per-repetition reports", expanded=False):
        display_reports(run_dir)

    with st.expander("🎯 GP-IS uncertainty", expanded=False):
        display_gp_is(run_dir)


if __name__ == "__main__":
    main()
