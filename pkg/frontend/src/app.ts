import { ApiClient, ApiError } from './api.js';
import { el, renderError, renderPlan, renderQuestion, SchemaMismatch } from './render.js';
import type { AnswerBody, DatasetInfo, Plan, SessionView } from './types.js';

function newToken(): string {
  if (typeof crypto !== 'undefined' && crypto.randomUUID) return crypto.randomUUID();
  return Math.random().toString(36).slice(2) + Date.now().toString(36);
}

// Hash-routed single page app: #/ picker, #/session/<id> question loop,
// #/plan/<id>/<method> plan view. The only client state is the session id
// in the hash plus cached payloads; everything else is refetched.
export class App {
  root: HTMLElement;
  api: ApiClient;
  private token: { round: number; value: string } | null = null;
  private inFlight = false;
  private planCache = new Map<string, Promise<Plan>>();

  constructor(root: HTMLElement, api = new ApiClient()) {
    this.root = root;
    this.api = api;
  }

  start(): Promise<void> {
    window.addEventListener('hashchange', () => void this.route());
    return this.route();
  }

  async route(): Promise<void> {
    const parts = window.location.hash.replace(/^#\/?/, '').split('/');
    try {
      if (parts[0] === 'session' && parts[1]) {
        await this.showSession(parts[1]);
      } else if (parts[0] === 'plan' && parts[1] && parts[2]) {
        await this.showPlan(parts[1], parts[2]);
      } else {
        await this.showPicker();
      }
    } catch (err) {
      this.fail(err);
    }
  }

  private fail(err: unknown) {
    const msg =
      err instanceof ApiError
        ? `${err.code}: ${err.message}`
        : err instanceof SchemaMismatch
          ? `unexpected payload: ${err.message}`
          : String(err);
    this.root.replaceChildren(
      renderError(msg),
      el('p', {}, [el('a', { href: '#/' }, ['back to start'])]),
    );
  }

  // ----- picker ---------------------------------------------------------

  async showPicker(): Promise<void> {
    const datasets = await this.api.listDatasets();
    if (datasets.length === 0) {
      this.root.replaceChildren(renderError('no datasets registered'));
      return;
    }

    const datasetSel = el('select', { id: 'dataset' }) as HTMLSelectElement;
    for (const d of datasets) {
      datasetSel.append(el('option', { value: d.id }, [`${d.id} (${d.pool_size} candidates)`]));
    }
    const subjectSel = el('select', { id: 'subject' }) as HTMLSelectElement;
    const fillSubjects = () => {
      const d = datasets.find((x) => x.id === datasetSel.value) as DatasetInfo;
      subjectSel.replaceChildren();
      for (const idx of d.negative_subjects) {
        subjectSel.append(el('option', { value: String(idx) }, [`subject #${idx}`]));
      }
    };
    datasetSel.addEventListener('change', fillSubjects);
    fillSubjects();

    const budget = el('input', {
      id: 'budget', type: 'number', min: '0', max: '50', value: '5',
    }) as HTMLInputElement;
    const strategySel = el('select', { id: 'strategy' }) as HTMLSelectElement;
    for (const s of ['exhaustive', 'similar_cost', 'random']) {
      strategySel.append(el('option', { value: s }, [s]));
    }
    const kSel = el('select', { id: 'k', disabled: '' }) as HTMLSelectElement;
    for (const k of ['2', '3']) kSel.append(el('option', { value: k }, [`${k} options`]));
    strategySel.addEventListener('change', () => {
      // only the sorted-cost heuristic poses k > 2 questions
      if (strategySel.value === 'similar_cost') {
        kSel.removeAttribute('disabled');
      } else {
        kSel.value = '2';
        kSel.setAttribute('disabled', '');
      }
    });
    const demoSeed = el('input', {
      id: 'demo-seed', type: 'number', placeholder: 'optional',
    }) as HTMLInputElement;

    const startBtn = el('button', { id: 'start', type: 'button' }, ['Start session']);
    startBtn.addEventListener('click', () => void this.createSession(
      datasetSel, subjectSel, budget, strategySel, kSel, demoSeed, startBtn,
    ));

    this.root.replaceChildren(
      el('section', { class: 'picker' }, [
        el('h1', {}, ['prefcourse']),
        el('p', { class: 'hint' }, [
          'Answer a few comparison questions about which changes are easier ',
          'for you, then get a recourse plan priced by your answers.',
        ]),
        el('label', { for: 'dataset' }, ['Dataset']), datasetSel,
        el('label', { for: 'subject' }, ['Subject']), subjectSel,
        el('label', { for: 'budget' }, ['Questions to answer']), budget,
        el('label', { for: 'strategy' }, ['Question selection']), strategySel,
        el('label', { for: 'k' }, ['Options per question']), kSel,
        el('label', { for: 'demo-seed' }, ['Demo truth seed']), demoSeed,
        startBtn,
      ]),
    );
  }

  private async createSession(
    datasetSel: HTMLSelectElement,
    subjectSel: HTMLSelectElement,
    budget: HTMLInputElement,
    strategySel: HTMLSelectElement,
    kSel: HTMLSelectElement,
    demoSeed: HTMLInputElement,
    startBtn: HTMLElement,
  ): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    startBtn.setAttribute('disabled', '');
    try {
      const body = {
        dataset_id: datasetSel.value,
        subject_index: Number(subjectSel.value),
        budget: Number(budget.value),
        strategy: strategySel.value,
        k: Number(kSel.value),
        ...(demoSeed.value === '' ? {} : { truth_seed: Number(demoSeed.value) }),
      };
      const view = await this.api.createSession(body);
      this.token = null;
      window.location.hash = `#/session/${view.session_id}`;
      this.renderSession(view);
    } catch (err) {
      startBtn.removeAttribute('disabled');
      this.fail(err);
    } finally {
      this.inFlight = false;
    }
  }

  // ----- question loop --------------------------------------------------

  async showSession(id: string): Promise<void> {
    this.renderSession(await this.api.getSession(id));
  }

  renderSession(view: SessionView): void {
    if (view.status === 'failed') {
      const f = view.failure;
      this.root.replaceChildren(
        renderError(f ? `${f.reason}: ${f.detail}` : 'session failed'),
        el('p', {}, [el('a', { href: '#/' }, ['start over'])]),
      );
      return;
    }
    if (view.status === 'ready' || view.status === 'completed') {
      this.renderReady(view);
      return;
    }
    let section: HTMLElement;
    try {
      section = renderQuestion(view);
    } catch (err) {
      this.fail(err); // error banner instead of a partial question
      return;
    }
    for (const btn of section.querySelectorAll<HTMLButtonElement>('button.option')) {
      btn.addEventListener('click', () =>
        void this.submit(view, { kind: 'preferred', index: Number(btn.dataset.index) }),
      );
    }
    const indiff = section.querySelector<HTMLButtonElement>('button.indifferent');
    if (indiff) {
      indiff.addEventListener('click', () => void this.submit(view, { kind: 'indifferent' }));
    }
    this.root.replaceChildren(
      section,
      el('p', { class: 'meta radius' }, [`uncertainty radius ${String(view.radius)}`]),
    );
  }

  private async submit(view: SessionView, answer: AnswerBody): Promise<void> {
    if (this.inFlight) return;
    // one token per displayed question; reused verbatim on retry so the
    // server applies the answer at most once
    if (!this.token || this.token.round !== view.round) {
      this.token = { round: view.round, value: newToken() };
    }
    this.inFlight = true;
    for (const b of this.root.querySelectorAll('button')) b.setAttribute('disabled', '');
    try {
      const next = await this.api.submitAnswer(view.session_id, this.token.value, answer);
      this.token = null;
      this.renderSession(next);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // answered elsewhere or already finished: the server wins, resync
        this.token = null;
        await this.showSession(view.session_id);
      } else {
        const retry = el('button', { class: 'retry', type: 'button' }, ['Retry']);
        retry.addEventListener('click', () => void this.submit(view, answer));
        this.root.replaceChildren(
          renderError(err instanceof Error ? err.message : String(err)),
          retry,
        );
      }
    } finally {
      this.inFlight = false;
    }
  }

  private renderReady(view: SessionView): void {
    const buttons = ['grad', 'graph', 'graph-worst-case'].map((method) => {
      const b = el('button', { class: 'method', 'data-method': method, type: 'button' }, [
        method,
      ]);
      b.addEventListener('click', () => {
        window.location.hash = `#/plan/${view.session_id}/${method}`;
        void this.route(); // hashchange also routes; the plan cache dedupes
      });
      return b;
    });
    const children = [
      el('h2', {}, ['All questions answered']),
      el('p', { class: 'meta' }, [
        `${String(view.round)} answers recorded, uncertainty radius ${String(view.radius)}`,
      ]),
      el('p', { class: 'hint' }, ['Pick how to generate your recourse plan:']),
      el('div', { class: 'methods' }, buttons),
    ];
    if (view.plans.length > 0) {
      children.push(el('p', { class: 'meta plans' }, [`already generated: ${view.plans.join(', ')}`]));
    }
    this.root.replaceChildren(el('section', { class: 'ready' }, children));
  }

  // ----- plan view ------------------------------------------------------

  async showPlan(id: string, method: string): Promise<void> {
    const key = `${id}/${method}`;
    // cache the promise so a double route never fires two generations
    if (!this.planCache.has(key)) {
      this.planCache.set(key, this.api.requestRecourse(id, method));
    }
    let plan: Plan;
    try {
      plan = await this.planCache.get(key)!;
    } catch (err) {
      this.planCache.delete(key);
      throw err;
    }
    this.root.replaceChildren(
      renderPlan(plan),
      el('p', {}, [
        el('a', { href: `#/session/${id}` }, ['back to session']),
        ' · ',
        el('a', { href: '#/' }, ['start over']),
      ]),
    );
  }
}
