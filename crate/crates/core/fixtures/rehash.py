#!/usr/bin/env python3
"""Recompute fixture hashes in manifest.json and the embedded file table."""
import hashlib, json, os, sys
root = os.path.dirname(os.path.abspath(__file__))
entries = [
  ('a1-evaluator-prompt-round0', 'prompt', 'transcript', 'appendix/a1_evaluator_prompt_round0.txt', None, None),
  ('a1-evaluator-round0', 'response', 'transcript', 'appendix/a1_evaluator_round0.txt', 'verdict', None),
  ('a1-evaluator-round1', 'response', 'transcript', 'appendix/a1_evaluator_round1.txt', 'verdict', None),
  ('a2-planner-prompt-round1', 'prompt', 'transcript', 'appendix/a2_planner_prompt_round1.txt', None, None),
  ('a2-planner-round1', 'response', 'transcript', 'appendix/a2_planner_round1.txt', 'plan', None),
  ('a3-taskgen-prompt', 'prompt', 'transcript', 'appendix/a3_taskgen_prompt.txt', None, None),
  ('a4-instructgen-prompt', 'prompt', 'transcript', 'appendix/a4_instructgen_prompt.txt', None, None),
  ('a5-tasks', 'response', 'transcript', 'appendix/a5_tasks.txt', 'task_list', None),
  ('a6-instructions', 'response', 'transcript', 'appendix/a6_instructions.txt', 'instructions', None),
  ('rejection-bad-verb', 'rejection', 'synthetic', 'rejection/bad_verb.txt', 'plan', 'bad_action_verb'),
  ('rejection-bad-pose-arity', 'rejection', 'synthetic', 'rejection/bad_pose_arity.txt', 'plan', 'bad_pose_arity'),
  ('rejection-bad-number', 'rejection', 'synthetic', 'rejection/bad_number.txt', 'plan', 'bad_number'),
  ('rejection-missing-execute', 'rejection', 'synthetic', 'rejection/missing_execute.txt', 'plan', 'missing_section'),
  ('rejection-empty-plan', 'rejection', 'synthetic', 'rejection/empty_plan.txt', 'plan', 'empty_plan'),
  ('rejection-zero-quaternion', 'rejection', 'synthetic', 'rejection/zero_quaternion.txt', 'plan', 'bad_number'),
  ('rejection-pose-without-brackets', 'rejection', 'synthetic', 'rejection/pose_without_brackets.txt', 'plan', 'bad_pose_arity'),
  ('rejection-pick-without-object', 'rejection', 'synthetic', 'rejection/pick_without_object.txt', 'plan', 'bad_action_verb'),
  ('rejection-nan-coordinate', 'rejection', 'synthetic', 'rejection/nan_coordinate.txt', 'plan', 'bad_number'),
  ('rejection-verdict-maybe', 'rejection', 'synthetic', 'rejection/verdict_maybe.txt', 'verdict', 'bad_verdict_token'),
  ('rejection-verdict-lowercase', 'rejection', 'synthetic', 'rejection/verdict_lowercase.txt', 'verdict', 'bad_verdict_token'),
  ('rejection-verdict-no-rationale', 'rejection', 'synthetic', 'rejection/verdict_no_rationale.txt', 'verdict', 'missing_section'),
  ('rejection-verdict-same-line', 'rejection', 'synthetic', 'rejection/verdict_same_line.txt', 'verdict', 'bad_verdict_token'),
  ('rejection-tasks-no-headers', 'rejection', 'synthetic', 'rejection/tasks_no_headers.txt', 'task_list', 'empty_plan'),
]
syn = os.path.join(root, 'synthetic')
for f in sorted(os.listdir(syn)) if os.path.isdir(syn) else []:
    if f.endswith('.json'):
        entries.append(('synthetic-' + f[:-5].replace('_', '-'), 'episode', 'synthetic', 'synthetic/' + f, 'episode', None))
out = []
for id_, role, prov, path, parser, expect in entries:
    data = open(os.path.join(root, path), 'rb').read()
    e = {'id': id_, 'role': role, 'provenance': prov, 'path': path, 'sha256': hashlib.sha256(data).hexdigest()}
    if parser: e['parser'] = parser
    if expect: e['expect'] = expect
    out.append(e)
json.dump({'fixtures': out}, open(os.path.join(root, 'manifest.json'), 'w'), indent=2)
open(os.path.join(root, 'manifest.json'), 'a').write('\n')
# embedded list for the Rust loader
lines = ['// Generated alongside manifest.json; one entry per fixture file.', 'pub(crate) static EMBEDDED: &[(&str, &str)] = &[']
for e in out:
    lines.append('    ("%s", include_str!("../fixtures/%s")),' % (e['path'], e['path']))
lines.append('];')
open(os.path.join(root, '..', 'src', 'fixtures_embedded.rs'), 'w').write('\n'.join(lines) + '\n')
print(f'{len(out)} fixtures hashed')
