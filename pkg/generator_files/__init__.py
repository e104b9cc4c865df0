from generator_files.prompt_template import (
    TEMPLATE_VERSION,
    Extraction,
    Prompt,
    build_prompt,
    extract_candidate,
    format_candidate,
)
from generator_files.proposers import (
    ExternalProposer,
    GenerationParams,
    Proposer,
    ProposerConfig,
    RandomMutationProposer,
    ReplayProposer,
    make_proposer,
)
