import type {
  Change,
  FeatureValue,
  GradPlan,
  GraphPlan,
  Plan,
  QuestionPayload,
  SessionView,
} from './types.js';

// Everything below builds DOM from API payloads verbatim. Numbers are
// stringified as received; the client never recomputes deltas or costs.

export class SchemaMismatch extends Error {}

export function el(
  tag: string,
  attrs: Record<string, string> = {},
  children: (HTMLElement | string)[] = [],
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  for (const child of children) {
    node.append(typeof child === 'string' ? document.createTextNode(child) : child);
  }
  return node;
}

export function fmt(v: FeatureValue): string {
  return String(v);
}

function changeRows(changes: Record<string, Change>): HTMLElement[] {
  return Object.entries(changes).map(([name, c]) =>
    el('div', { class: 'feature changed' }, [
      el('span', { class: 'name' }, [name]),
      el('span', { class: 'delta' }, [`${fmt(c.from)} → ${fmt(c.to)}`]),
    ]),
  );
}

function checkQuestion(q: QuestionPayload) {
  if (typeof q.round !== 'number' || typeof q.k !== 'number') {
    throw new SchemaMismatch('question round/k missing');
  }
  if (!Array.isArray(q.options) || q.options.length !== q.k) {
    throw new SchemaMismatch(`expected ${q.k} options, got ${q.options?.length}`);
  }
  for (const opt of q.options) {
    if (typeof opt.pool_index !== 'number' || !opt.features || !opt.changes) {
      throw new SchemaMismatch('option missing pool_index/features/changes');
    }
  }
  if (typeof q.indifferent_allowed !== 'boolean') {
    throw new SchemaMismatch('indifferent_allowed missing');
  }
}

// One card per option: the option's features with the changed ones
// highlighted as from -> to deltas, all in original units as sent by the
// server. Identical-to-current options get an explicit "no change" line.
function optionCard(opt: QuestionPayload['options'][number], label: string): HTMLElement {
  const rows: HTMLElement[] = [];
  const changed = new Set(Object.keys(opt.changes));
  for (const [name, value] of Object.entries(opt.features)) {
    if (changed.has(name)) {
      const c = opt.changes[name];
      rows.push(
        el('div', { class: 'feature changed' }, [
          el('span', { class: 'name' }, [name]),
          el('span', { class: 'delta' }, [`${fmt(c.from)} → ${fmt(c.to)}`]),
        ]),
      );
    } else {
      rows.push(
        el('div', { class: 'feature' }, [
          el('span', { class: 'name' }, [name]),
          el('span', { class: 'value' }, [fmt(value)]),
        ]),
      );
    }
  }
  if (changed.size === 0) {
    rows.unshift(el('div', { class: 'feature no-change' }, ['no change']));
  }
  return el(
    'button',
    { class: 'card option', 'data-index': String(opt.pool_index), type: 'button' },
    [el('h3', {}, [label]), ...rows],
  );
}

export function renderQuestion(view: SessionView): HTMLElement {
  const q = view.question;
  if (!q) throw new SchemaMismatch('session has no pending question');
  checkQuestion(q);
  const cards = q.options.map((opt, i) => optionCard(opt, `Option ${i + 1}`));
  const children: HTMLElement[] = [
    el('p', { class: 'progress' }, [`Question ${q.round + 1} of ${view.budget}`]),
    el('p', { class: 'hint' }, ['Which change would be easier for you?']),
    el('div', { class: 'options' }, cards),
  ];
  if (q.indifferent_allowed) {
    children.push(
      el('button', { class: 'indifferent', 'data-action': 'indifferent', type: 'button' }, [
        'They are equally hard',
      ]),
    );
  }
  return el('section', { class: 'question' }, children);
}

function validityBadge(valid: boolean): HTMLElement {
  return el('span', { class: `badge ${valid ? 'valid' : 'invalid'}` }, [
    valid ? 'valid' : 'invalid',
  ]);
}

function gradPlanView(plan: GradPlan): HTMLElement {
  return el('section', { class: 'plan grad' }, [
    el('h2', {}, ['Recommended change ', validityBadge(plan.valid)]),
    el('div', { class: 'card' }, [
      ...changeRows(plan.changes),
      el('p', { class: 'meta' }, [
        `worst-case cost ${fmt(plan.worst_case_cost)} after ${fmt(plan.iterations_used)} iterations`,
      ]),
    ]),
  ]);
}

function graphPlanView(plan: GraphPlan): HTMLElement {
  const steps = plan.steps.map((step, i) =>
    el('li', { class: 'step', 'data-node': String(step.node) }, [
      el('h3', {}, [`Step ${i + 1}`]),
      ...changeRows(step.changes),
      el('p', { class: 'meta' }, [`step cost ${fmt(plan.edge_costs[i])}`]),
    ]),
  );
  return el('section', { class: 'plan graph' }, [
    el('h2', {}, ['Recommended path ', validityBadge(plan.valid)]),
    el('ol', { class: 'steps' }, steps),
    el('p', { class: 'meta total' }, [`total path cost ${fmt(plan.path_cost)}`]),
  ]);
}

export function renderPlan(plan: Plan): HTMLElement {
  if (plan.method === 'grad') return gradPlanView(plan);
  if (plan.method === 'graph' || plan.method === 'graph-worst-case') {
    return graphPlanView(plan);
  }
  throw new SchemaMismatch(`unknown plan method ${(plan as { method: string }).method}`);
}

export function renderError(message: string): HTMLElement {
  return el('div', { class: 'banner error', role: 'alert' }, [message]);
}
