################################################################################
# FILE: pages/2_Run_Experiment.py
# LOCATION: pages/ directory
################################################################################

import sys
import time
from pathlib import Path

import streamlit as st

sys.path.append(str(Path(__file__).resolve().parent.parent))
from dashboard.dashboard import build_run_command, list_configs, stream_command
from runexperiment.config import ALGORITHMS

st.set_page_config(
    page_title="Run Experiment",
    page_icon="🧪",
    layout="centered"
)

# Initialize session state
if "processing" not in st.session_state:
    st.session_state.processing = False
if "run_log" not in st.session_state:
    st.session_state.run_log = []

EXIT_MESSAGES = {
    0: ("success", "✅ Experiment finished"),
    1: ("warning", "⚠️ Experiment finished with failed repetitions (see failures.json)"),
    2: ("error", "❌ Configuration error"),
}


def start_processing():
    """Callback to start processing"""
    st.session_state.processing = True
    st.session_state.run_log = []


def main():
    st.title("🧪 Run Experiment")
    st.markdown("Launch a benchmark run in the background and follow its log")

    configs = list_configs()
    if not configs:
        st.error("❌ No configuration files found in configs/")
        return

    st.subheader("⚙️ Configuration")
    config_path = st.selectbox("Benchmark", configs, format_func=lambda p: p.stem)
    algorithms = st.multiselect("Algorithms (empty = as configured)", ALGORITHMS)
    workers = st.number_input("Workers (0 = all cores)", min_value=0, max_value=256, value=0, step=1)
    output_dir = st.text_input("Output directory (empty = as configured)", value="")

    st.button(
        "▶️ Start Run",
        disabled=st.session_state.processing,
        on_click=start_processing,
        width="stretch"
    )

    log_area = st.empty()

    if st.session_state.processing:
        command = build_run_command(config_path, output_dir or None, algorithms, workers or None)
        st.code(" ".join(command), language="bash")
        exit_code = None
        with st.spinner("Running experiment..."):
            for item in stream_command(command):
                if isinstance(item, int):
                    exit_code = item
                    break
                st.session_state.run_log.append(item)
                log_area.code("\n".join(st.session_state.run_log[-200:]))
        st.session_state.processing = False
        kind, message = EXIT_MESSAGES.get(exit_code, ("error", f"❌ Exit code {exit_code}"))
        getattr(st, kind)(message)
        time.sleep(0.5)
    elif st.session_state.run_log:
        log_area.code("\n".join(st.session_state.run_log[-200:]))


if __name__ == "__main__":
    main()
