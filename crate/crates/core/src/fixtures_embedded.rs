// Generated alongside manifest.json; one entry per fixture file.
pub(crate) static EMBEDDED: &[(&str, &str)] = &[
    ("appendix/a1_evaluator_prompt_round0.txt", include_str!("../fixtures/appendix/a1_evaluator_prompt_round0.txt")),
    ("appendix/a1_evaluator_round0.txt", include_str!("../fixtures/appendix/a1_evaluator_round0.txt")),
    ("appendix/a1_evaluator_round1.txt", include_str!("../fixtures/appendix/a1_evaluator_round1.txt")),
    ("appendix/a2_planner_prompt_round1.txt", include_str!("../fixtures/appendix/a2_planner_prompt_round1.txt")),
    ("appendix/a2_planner_round1.txt", include_str!("../fixtures/appendix/a2_planner_round1.txt")),
    ("appendix/a3_taskgen_prompt.txt", include_str!("../fixtures/appendix/a3_taskgen_prompt.txt")),
    ("appendix/a4_instructgen_prompt.txt", include_str!("../fixtures/appendix/a4_instructgen_prompt.txt")),
    ("appendix/a5_tasks.txt", include_str!("../fixtures/appendix/a5_tasks.txt")),
    ("appendix/a6_instructions.txt", include_str!("../fixtures/appendix/a6_instructions.txt")),
    ("rejection/bad_verb.txt", include_str!("../fixtures/rejection/bad_verb.txt")),
    ("rejection/bad_pose_arity.txt", include_str!("../fixtures/rejection/bad_pose_arity.txt")),
    ("rejection/bad_number.txt", include_str!("../fixtures/rejection/bad_number.txt")),
    ("rejection/missing_execute.txt", include_str!("../fixtures/rejection/missing_execute.txt")),
    ("rejection/empty_plan.txt", include_str!("../fixtures/rejection/empty_plan.txt")),
    ("rejection/zero_quaternion.txt", include_str!("../fixtures/rejection/zero_quaternion.txt")),
    ("rejection/pose_without_brackets.txt", include_str!("../fixtures/rejection/pose_without_brackets.txt")),
    ("rejection/pick_without_object.txt", include_str!("../fixtures/rejection/pick_without_object.txt")),
    ("rejection/nan_coordinate.txt", include_str!("../fixtures/rejection/nan_coordinate.txt")),
    ("rejection/verdict_maybe.txt", include_str!("../fixtures/rejection/verdict_maybe.txt")),
    ("rejection/verdict_lowercase.txt", include_str!("../fixtures/rejection/verdict_lowercase.txt")),
    ("rejection/verdict_no_rationale.txt", include_str!("../fixtures/rejection/verdict_no_rationale.txt")),
    ("rejection/verdict_same_line.txt", include_str!("../fixtures/rejection/verdict_same_line.txt")),
    ("rejection/tasks_no_headers.txt", include_str!("../fixtures/rejection/tasks_no_headers.txt")),
    ("synthetic/t1_direct_stack.json", include_str!("../fixtures/synthetic/t1_direct_stack.json")),
    ("synthetic/t2_stalls.json", include_str!("../fixtures/synthetic/t2_stalls.json")),
    ("synthetic/t4_blind_stack_lucky.json", include_str!("../fixtures/synthetic/t4_blind_stack_lucky.json")),
    ("synthetic/t4_weigh_then_stack.json", include_str!("../fixtures/synthetic/t4_weigh_then_stack.json")),
    ("synthetic/t5_place_collision.json", include_str!("../fixtures/synthetic/t5_place_collision.json")),
    ("synthetic/t6_edge_slide.json", include_str!("../fixtures/synthetic/t6_edge_slide.json")),
    ("synthetic/t6_prose_only.json", include_str!("../fixtures/synthetic/t6_prose_only.json")),
];
