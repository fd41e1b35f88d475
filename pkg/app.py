"""
Caption Trace Viewer - Streamlit Web Interface
Shows each decoded caption with its per-word gate values and the visual and
textual attention weights written by `cli.py caption --out`.
"""

import json
import os
from typing import Dict, List, Optional

import numpy as np
import streamlit as st

from config_env import config, print_config_info
from error_handling import DataFormatError, ErrorContext
from logger import logger

TRACE_PATH = config.TRACE_PATH


def load_caption_traces(path: str) -> List[Dict]:
    """Read a caption trace JSONL file; blank lines are skipped"""
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"invalid JSON: {e.msg}", line=number) from None
            if not isinstance(row, dict) or not {"video_id", "tokens", "trace"} <= set(row):
                raise DataFormatError("trace rows need video_id, tokens and trace", line=number)
            rows.append(row)
    logger.debug(f"Loaded {len(rows)} caption traces from {path}")
    return rows


def gate_series(row: Dict) -> List[Dict]:
    """(token, gate) per step; steps without a gate (baselines) are dropped"""
    return [
        {"token": step["token"], "gate": step["gate"]}
        for step in row["trace"]
        if step.get("gate") is not None
    ]


def attention_matrix(row: Dict, kind: str = "alpha") -> np.ndarray:
    """
    Stack per-step attention weights into a steps x slots matrix

    Text attention grows by one word per step, so its rows are zero-padded
    on the right to the longest history.
    """
    if kind not in ("alpha", "beta"):
        raise ValueError(f"kind must be 'alpha' or 'beta', got {kind!r}")
    weights = [step[kind] for step in row["trace"]]
    if not weights:
        return np.zeros((0, 0))
    width = max(len(w) for w in weights)
    matrix = np.zeros((len(weights), width))
    for i, w in enumerate(weights):
        matrix[i, :len(w)] = w
    return matrix


@st.cache_data
def _cached_traces(path: str, mtime: float) -> List[Dict]:
    return load_caption_traces(path)


def _step_labels(row: Dict) -> List[str]:
    return [f"{i + 1}:{step['token']}" for i, step in enumerate(row["trace"])]


def main():
    """Main Streamlit app"""
    st.set_page_config(page_title="Caption Trace Viewer", page_icon="🎬", layout="wide")
    st.title("🎬 Caption Trace Viewer")
    st.markdown("*Gate values and attention weights per generated word*")
    st.divider()

    if config.DEBUG:
        print_config_info()

    with st.sidebar:
        st.header("Trace File")
        path = st.text_input("Path", value=TRACE_PATH)

    if not os.path.exists(path):
        st.error(f"⚠️ Trace file not found: {path}")
        st.info("Run `python cli.py caption --data DATA --out captions.jsonl` first.")
        st.stop()

    rows: Optional[List[Dict]] = None
    with ErrorContext("load caption traces", raise_on_error=False):
        rows = _cached_traces(path, os.path.getmtime(path))
    if not rows:
        st.error("⚠️ No caption traces could be loaded.")
        st.stop()

    with st.sidebar:
        st.metric("Videos", len(rows))
        video_id = st.selectbox("Video", [row["video_id"] for row in rows])

    row = next(r for r in rows if r["video_id"] == video_id)
    st.subheader("Caption")
    st.markdown(f"**{' '.join(row['tokens'])}**")
    if "log_prob" in row:
        st.caption(f"log p = {row['log_prob']:.4f}")

    gates = gate_series(row)
    st.subheader("Gate per word")
    if gates:
        st.caption("Higher values mean the last-word LSTM dominates; lower values favour the attended history.")
        st.bar_chart({"gate": [g["gate"] for g in gates]})
        st.table(gates)
    else:
        st.info("This model has no gate.")

    col1, col2 = st.columns(2)
    with col1:
        st.subheader("Visual attention (α)")
        alpha = attention_matrix(row, "alpha")
        st.caption("Rows are decoding steps; the last column is the blank slot.")
        st.dataframe(
            {f"frame {j + 1}" if j < alpha.shape[1] - 1 else "blank": alpha[:, j] for j in range(alpha.shape[1])},
        )
    with col2:
        st.subheader("Text attention (β)")
        beta = attention_matrix(row, "beta")
        if beta.size:
            st.caption("Columns are previous words, w0 being BOS.")
            st.dataframe({f"w{j}": beta[:, j] for j in range(beta.shape[1])})
        else:
            st.info("This model has no text attention.")

    with st.expander("Steps"):
        st.write(_step_labels(row))


if __name__ == "__main__":
    main()
