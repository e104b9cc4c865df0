from src.mutation.mutator import (
    MutationPlan,
    MutatorConfig,
    apply_plan,
    bootstrap,
    draw_rng,
    mutate,
    plan_mutation,
    round_width,
)
