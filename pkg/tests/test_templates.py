import hashlib

from evomd.templates import (BACKWARD, DEFAULT_TEMPLATES, EXPERT_SYSTEM, FORWARD_1, FORWARD_2, PINNED_SHA256,
                             REASONING_INSTRUCTION, SYSTEM_PROMPT)

# prompt texts as LaTeX source, frozen verbatim
LATEX = {
    "system": r"You are an AI assistant to help me predict molecular sequence progression based on given molecular compositions and their existence durations and analysis. Each data point consists of a molecule and the duration it persists in the system, the unit of duration is ps. If the question is about predicting molecular sequences, format your answer as (molecule, time). Otherwise, answer normally.",
    "forward_1": r"\textbf{Input:} The history sequence is \{SEQUENCE\_HISTORY\}, What is the next element? Output ONLY the next element in the format: (molecule, time). No explanation. No code. No extra words!",
    "forward_2": r"\textbf{Input:} The history sequence is \{SEQUENCE\_HISTORY\}, What are the next two elements? Output ONLY the next two elements in the format: (molecule, time). No explanation. No code. No extra words!",
    "backward": r"\textbf{Input:} The history sequence is \{SEQUENCE\_HISTORY\}, What is the previous element? Output ONLY the previous element in the format: (molecule, time). No explanation. No code. No extra words!",
}


def detex(s):
    return s.replace(r"\textbf{Input:} ", "").replace(r"\{", "{").replace(r"\}", "}").replace(r"\_", "_")


def sha(s):
    return hashlib.sha256(s.encode()).hexdigest()


def test_templates_equal_detexed_source():
    assert SYSTEM_PROMPT == detex(LATEX["system"])
    assert FORWARD_1 == detex(LATEX["forward_1"])
    assert FORWARD_2 == detex(LATEX["forward_2"])
    assert BACKWARD == detex(LATEX["backward"])


def test_pinned_hashes():
    for name, text in (("system", SYSTEM_PROMPT), ("forward_1", FORWARD_1), ("forward_2", FORWARD_2),
                       ("backward", BACKWARD), ("expert_system", EXPERT_SYSTEM),
                       ("reasoning_instruction", REASONING_INSTRUCTION)):
        assert sha(text) == PINNED_SHA256[name]
    DEFAULT_TEMPLATES.verify()


def test_potential_k_reuses_one_step_prompt():
    assert DEFAULT_TEMPLATES.instruction_for("potential_k") == FORWARD_1
