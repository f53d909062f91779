"""Prompt templates for the forecasting dataset.

The strings are pinned by SHA-256; ``verify`` refuses to format with a
template whose bytes have drifted.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ValidationError

PLACEHOLDER = "{SEQUENCE_HISTORY}"

SYSTEM_PROMPT = (
    "You are an AI assistant to help me predict molecular sequence progression based on given "
    "molecular compositions and their existence durations and analysis. Each data point consists "
    "of a molecule and the duration it persists in the system, the unit of duration is ps. If the "
    "question is about predicting molecular sequences, format your answer as (molecule, time). "
    "Otherwise, answer normally."
)

FORWARD_1 = (
    "The history sequence is {SEQUENCE_HISTORY}, What is the next element? Output ONLY the next "
    "element in the format: (molecule, time). No explanation. No code. No extra words!"
)

FORWARD_2 = (
    "The history sequence is {SEQUENCE_HISTORY}, What are the next two elements? Output ONLY the "
    "next two elements in the format: (molecule, time). No explanation. No code. No extra words!"
)

BACKWARD = (
    "The history sequence is {SEQUENCE_HISTORY}, What is the previous element? Output ONLY the "
    "previous element in the format: (molecule, time). No explanation. No code. No extra words!"
)

# Static reasoning prompts; emitted as-is, never paired with samples.
EXPERT_SYSTEM = """You are an expert scientific simulator specializing in Reactive Molecular Dynamics (RMD) for Chemical Vapor Deposition (CVD) synthesis.

System Context:
The reaction system involves the sulfidation of Mo3O9 precursors by S2 gas. Key dynamics include Oxygen-Sulfur exchange, structural relaxation, and thermal decomposition.

Task Definition:
Your goal is to forecast the trajectory of chemical evolution. Each data point (Molecule, Duration) represents a distinct chemical state and its kinetic persistence (stability).
- A short duration implies a transient intermediate or transition state.
- A long duration implies a thermodynamically stable product or metastable trap."""

REASONING_INSTRUCTION = """Task: You are provided with a historical trajectory of molecular species and their durations.

History Sequence: {history_seq}
Your Model Prediction: ({predict_res})

Instructions:
Provide a scientific explanation for this transition. Your response must:
1. Mechanism: Analyze the change in stoichiometry from the last history step to the predicted step. What specific chemical process drives this transformation?
2. Stability: Analyze the predicted duration ({duration}). What does this specific timescale imply about the thermodynamic state or kinetic stability of the predicted molecule?
3. Format: Write in strict, concise Academic English.
Your answer must be in academic English, concise, and only include the reasoning (no extra content, no repetition)."""

PINNED_SHA256 = {
    "system": "17950d7616895decc8742fe756227e531438760840b6373d867d0deb593f7549",
    "forward_1": "ecd2ef4bda018b21073479b957bd9b6b3c732a3e3f0cff1ffbd764ae6925170b",
    "forward_2": "58aef8c8094cfef56c7f88d1bf7cf24e0816e59274ce3adaa2f121f4ee10376b",
    "backward": "d042c60f8ca7cbfdabfedd5972ca2afdba63e279f0d7dd2e17c7e32a34237f9f",
    "expert_system": "d3b807b218d55f9726615e0be269ce00e0639fb60ed183f185512f875d90c5a5",
    "reasoning_instruction": "01816db8dd7483541ce9db2f099a182eb90432d6147a4c37350e387c0983c77f",
}


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TemplateSet:
    system: str = SYSTEM_PROMPT
    instructions: dict[str, str] = field(default_factory=lambda: {
        "forward_1": FORWARD_1,
        "forward_2": FORWARD_2,
        "backward": BACKWARD,
        # potential-k shares the 1-step prompt; candidates come from sampling
        "potential_k": FORWARD_1,
    })

    def instruction_for(self, task: str) -> str:
        try:
            return self.instructions[task]
        except KeyError:
            raise ValidationError(f"no instruction template for task {task!r}") from None

    def hashes(self) -> dict[str, str]:
        out = {"system": sha256(self.system)}
        for task, text in self.instructions.items():
            out[task] = sha256(text)
        return out

    def verify(self) -> None:
        """Raise if any template differs from its pinned hash."""
        got = self.hashes()
        for name, digest in got.items():
            key = "forward_1" if name == "potential_k" else name
            if PINNED_SHA256.get(key) != digest:
                raise ValidationError(f"template {name!r} does not match its pinned SHA-256")


DEFAULT_TEMPLATES = TemplateSet()
