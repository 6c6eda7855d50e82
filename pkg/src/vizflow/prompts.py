"""Versioned prompt templates for the generator and judge clients.

Templates are artifacts of this project, keyed by id so runs can pin the
exact wording they were produced with. User templates receive a context
block (element names and descriptions) plus, for repair/extend/check
modes, the serialized sample under calibration.
"""

FORMAT_RULES = """\
Answer using fenced blocks. A block opens with a line `<<<name>>>` and
closes with a line `<<</name>>>`. Blocks may nest. Do not emit any block
you were not asked for.
"""

SAMPLE_SCHEMA = """\
Emit each task as:
<<<sample>>>
<<<question>>>one self-contained question about the figure<<</question>>>
<<<answer>>>the exact final answer, machine-checkable<<</answer>>>
<<<original_code>>>Python that draws the figure and saves exactly one PNG<<</original_code>>>
<<<step>>>
<<<thought>>>why this visual edit helps<<</thought>>>
<<<code>>>Python that loads img0.png, edits it, saves one PNG<<</code>>>
<<</step>>>
<<</sample>>>
Mark each construction in code with a `# entity: <label>` comment.
"""

CONCEPT_SCHEMA = """\
Emit each predicted concept as:
<<<concept>>>
name: <short name>
description: <one sentence>
domain: <domain label>
<<</concept>>>
"""

TOOL_SCHEMA = """\
Emit each predicted tool as:
<<<tool>>>
name: <short name>
description: <one sentence>
signature: <argument roles>
<<</tool>>>
"""

TEMPLATES: dict[str, dict[str, str]] = {
    "from_knowledge-v1": {
        "system": (
            "You are a creator of interactive visual-reasoning tasks. Given "
            "knowledge concepts, invent new figure-grounded questions with "
            "drawing code and a short visual-edit trajectory, and predict the "
            "visual tools such tasks would rely on.\n" + FORMAT_RULES
        ),
        "user": (
            "Knowledge concepts to combine:\n{context}\n\n"
            "Create {n_samples} tasks grounded in these concepts.\n"
            + SAMPLE_SCHEMA + TOOL_SCHEMA
        ),
    },
    "from_tools-v1": {
        "system": (
            "You are a creator of interactive visual-reasoning tasks. Given "
            "visual tools, invent new figure-grounded questions whose "
            "trajectories exercise the tools, and predict the knowledge "
            "concepts such tasks teach.\n" + FORMAT_RULES
        ),
        "user": (
            "Visual tools to combine:\n{context}\n\n"
            "Create {n_samples} tasks that exercise these tools.\n"
            + SAMPLE_SCHEMA + CONCEPT_SCHEMA
        ),
    },
    "repair-v1": {
        "system": (
            "You recalibrate visual-reasoning tasks. The rendered images are "
            "valid but the textual answer is wrong. Reconstruct a question and "
            "answer that the images actually support.\n" + FORMAT_RULES
        ),
        "user": (
            "Current task:\n{payload}\n\n"
            "Emit exactly one block:\n<<<repair>>>\n"
            "<<<question>>>the reconstructed question<<</question>>>\n"
            "<<<answer>>>the answer the images support<<</answer>>>\n"
            "<<</repair>>>\n"
        ),
    },
    "extend_parallel-v1": {
        "system": (
            "You deepen visual-reasoning tasks. Add one auxiliary construction "
            "that is independent of existing auxiliary work and extend the "
            "question accordingly.\n" + FORMAT_RULES
        ),
        "user": (
            "Parent task:\n{payload}\n\n"
            "Emit exactly one block:\n<<<extension>>>\n"
            "<<<question>>>updated question<<</question>>>\n"
            "<<<answer>>>updated answer<<</answer>>>\n"
            "<<<thought>>>why the new construction helps<<</thought>>>\n"
            "<<<code>>>Python loading img0.png, drawing the construction, saving one PNG<<</code>>>\n"
            "<<<references>>>comma-separated entity labels drawn from the ORIGINAL figure only<<</references>>>\n"
            "<<</extension>>>\n"
        ),
    },
    "extend_sequential-v1": {
        "system": (
            "You deepen visual-reasoning tasks. Add one auxiliary construction "
            "that builds on an entity introduced by an earlier reasoning step, "
            "and extend the question accordingly.\n" + FORMAT_RULES
        ),
        "user": (
            "Parent task:\n{payload}\n\n"
            "Emit exactly one block:\n<<<extension>>>\n"
            "<<<question>>>updated question<<</question>>>\n"
            "<<<answer>>>updated answer<<</answer>>>\n"
            "<<<thought>>>why the new construction helps<<</thought>>>\n"
            "<<<code>>>Python loading img0.png, drawing the construction, saving one PNG<<</code>>>\n"
            "<<<references>>>comma-separated entity labels, at least one from a prior STEP<<</references>>>\n"
            "<<</extension>>>\n"
        ),
    },
    "check-v1": {
        "system": (
            "You are a strict verifier of visual-reasoning tasks. Judge three "
            "criteria independently: (1) the answer is correct for the "
            "question and figure, (2) the original rendered image is valid, "
            "(3) the intermediate visual states are coherent with the "
            "reasoning.\n" + FORMAT_RULES
        ),
        "user": (
            "Task under review:\n{payload}\n\n"
            "Emit exactly one block:\n<<<verdict>>>\n"
            "answer_ok: true|false\nimage_ok: true|false\nstates_ok: true|false\n"
            "rationale: <one sentence>\n<<</verdict>>>\n"
        ),
    },
    "judge_perception-v1": {
        "system": (
            "You compare a candidate rendering against an expert annotation. "
            "Decide whether the candidate marks the same location(s).\n" + FORMAT_RULES
        ),
        "user": (
            "Question:\n{payload}\n\nThe candidate image and the annotation "
            "image are attached side by side. Emit:\n<<<verdict>>>\n"
            "match: true|false\nrationale: <one sentence>\n<<</verdict>>>\n"
        ),
    },
    "judge_instruction-v1": {
        "system": (
            "You compare a candidate visual edit against an expert annotation. "
            "Decide whether the requested interaction was performed.\n" + FORMAT_RULES
        ),
        "user": (
            "Instruction:\n{payload}\n\nThe candidate image and the annotation "
            "image are attached side by side. Emit:\n<<<verdict>>>\n"
            "match: true|false\nrationale: <one sentence>\n<<</verdict>>>\n"
        ),
    },
    "judge_reasoning-v1": {
        "system": (
            "You grade a candidate answer against the gold answer, allowing "
            "equivalent formulations.\n" + FORMAT_RULES
        ),
        "user": (
            "{payload}\n\nEmit:\n<<<verdict>>>\nmatch: true|false\n"
            "rationale: <one sentence>\n<<</verdict>>>\n"
        ),
    },
}

DEFAULT_TEMPLATE_FOR_MODE = {
    "from_knowledge": "from_knowledge-v1",
    "from_tools": "from_tools-v1",
    "repair": "repair-v1",
    "extend_parallel": "extend_parallel-v1",
    "extend_sequential": "extend_sequential-v1",
    "check": "check-v1",
}
