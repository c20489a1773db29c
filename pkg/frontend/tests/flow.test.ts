import { spawn, type ChildProcess } from 'node:child_process';
import { mkdtempSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, beforeEach, describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/api.js';
import { App } from '../src/app.js';

// Scripted sessions against a real server process. The server trains its
// model on startup, so the first poll can take a while.

const PORT = 8893;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let api: ApiClient;
let subjectIndex: number;

async function waitFor(pred: () => boolean, ms = 60_000): Promise<void> {
  const start = Date.now();
  while (!pred()) {
    if (Date.now() - start > ms) throw new Error('timed out waiting for UI state');
    await new Promise((r) => setTimeout(r, 25));
  }
}

async function startServer(): Promise<ChildProcess> {
  const store = mkdtempSync(join(tmpdir(), 'prefcourse-ui-'));
  const proc = spawn(
    'python3',
    [
      '-m', 'prefcourse.cli', 'serve',
      '--host', '127.0.0.1',
      '--port', String(PORT),
      '--store-dir', store,
      '--synthetic-n', '400',
      '--seed', '0',
    ],
    { stdio: ['ignore', 'ignore', 'pipe'] },
  );
  let stderr = '';
  proc.stderr?.on('data', (chunk) => {
    stderr += String(chunk);
  });
  const deadline = Date.now() + 90_000;
  for (;;) {
    if (proc.exitCode !== null) throw new Error(`server exited early:\n${stderr}`);
    try {
      const r = await fetch(`${BASE}/datasets`);
      if (r.ok) return proc;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error(`server never became ready:\n${stderr}`);
    }
    await new Promise((r) => setTimeout(r, 200));
  }
}

// The UI cannot peek at the model, so probe candidate subjects through the
// public API until one has a reachable graph plan.
async function findWorkableSubject(): Promise<number> {
  const datasets = await api.listDatasets();
  const synth = datasets.find((d) => d.id === 'synthetic');
  if (!synth) throw new Error('synthetic dataset missing');
  for (const idx of synth.negative_subjects.slice(0, 8)) {
    const view = await api.createSession({
      dataset_id: 'synthetic',
      subject_index: idx,
      budget: 0,
    });
    try {
      await api.requestRecourse(view.session_id, 'graph');
      return idx;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) continue;
      throw err;
    }
  }
  throw new Error('no subject with a reachable graph plan among the first 8');
}

beforeAll(async () => {
  server = await startServer();
  api = new ApiClient(BASE);
  subjectIndex = await findWorkableSubject();
});

afterAll(() => {
  server?.kill();
});

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  window.location.hash = '';
});

function mount(): { app: App; root: HTMLElement } {
  const root = document.getElementById('app')!;
  const app = new App(root, new ApiClient(BASE));
  return { app, root };
}

describe('scripted elicitation flow', () => {
  it('completes a T = 3 session from the picker and renders a valid plan', async () => {
    const { app, root } = mount();
    await app.start();

    // picker: choose the probed subject, three questions, simulated truth
    await waitFor(() => root.querySelector('#start') !== null);
    (root.querySelector('#dataset') as HTMLSelectElement).value = 'synthetic';
    const subjectSel = root.querySelector('#subject') as HTMLSelectElement;
    subjectSel.value = String(subjectIndex);
    (root.querySelector('#budget') as HTMLInputElement).value = '3';
    (root.querySelector('#demo-seed') as HTMLInputElement).value = '7';
    (root.querySelector('#start') as HTMLButtonElement).click();

    await waitFor(() => root.querySelector('.question') !== null);
    expect(window.location.hash).toMatch(/^#\/session\//);
    const sessionId = window.location.hash.split('/')[2];

    // answer three pairwise questions by always taking the first card
    for (let round = 0; round < 3; round += 1) {
      await waitFor(() => {
        const p = root.querySelector('.progress');
        return p !== null && p.textContent === `Question ${round + 1} of 3`;
      });
      expect(root.querySelectorAll('button.option')).toHaveLength(2);
      expect(root.querySelector('button.indifferent')).not.toBeNull();
      (root.querySelector('button.option') as HTMLButtonElement).click();
      await waitFor(
        () => root.querySelector('.question') === null || root.querySelector('.progress')?.textContent === `Question ${round + 2} of 3`,
      );
    }

    await waitFor(() => root.querySelector('.ready') !== null);
    const transcript = await api.getTranscript(sessionId);
    expect(transcript.entries).toHaveLength(3);

    // generate the path plan and check the view against the payload
    (root.querySelector('button.method[data-method="graph"]') as HTMLButtonElement).click();
    await waitFor(() => root.querySelector('.plan.graph') !== null);
    const plan = await api.requestRecourse(sessionId, 'graph');
    if (plan.method !== 'graph') throw new Error('expected a graph plan');
    expect(root.querySelector('.badge.valid')?.textContent).toBe('valid');
    const steps = [...root.querySelectorAll<HTMLElement>('.plan .step')];
    expect(steps.map((s) => s.dataset.node)).toEqual(plan.steps.map((s) => String(s.node)));
    expect(root.querySelector('.plan .total')?.textContent).toBe(
      `total path cost ${String(plan.path_cost)}`,
    );
  });

  it('resumes an in-progress session after a reload', async () => {
    const created = await api.createSession({
      dataset_id: 'synthetic',
      subject_index: subjectIndex,
      budget: 3,
      truth_seed: 7,
    });
    const { app, root } = mount();
    window.location.hash = `#/session/${created.session_id}`;
    await app.start();
    await waitFor(() => root.querySelector('.progress') !== null);
    (root.querySelector('button.option') as HTMLButtonElement).click();
    await waitFor(() => root.querySelector('.progress')?.textContent === 'Question 2 of 3');

    // fresh app instance, same session id: picks up at question 2
    document.body.innerHTML = '<div id="app"></div>';
    const second = mount();
    window.location.hash = `#/session/${created.session_id}`;
    await second.app.start();
    await waitFor(() => second.root.querySelector('.progress') !== null);
    expect(second.root.querySelector('.progress')?.textContent).toBe('Question 2 of 3');
  });
});

describe('double submission', () => {
  it('a double-click records exactly one answer', async () => {
    const created = await api.createSession({
      dataset_id: 'synthetic',
      subject_index: subjectIndex,
      budget: 1,
      truth_seed: 7,
    });
    const { app, root } = mount();
    window.location.hash = `#/session/${created.session_id}`;
    await app.start();
    await waitFor(() => root.querySelector('button.option') !== null);

    const first = root.querySelector('button.option') as HTMLButtonElement;
    first.click();
    first.click(); // second click lands while the first is in flight
    await waitFor(() => root.querySelector('.ready') !== null);

    const transcript = await api.getTranscript(created.session_id);
    expect(transcript.entries).toHaveLength(1);
    expect(transcript.status).toBe('ready');
  });

  it('resubmitting the same token over the wire applies the answer once', async () => {
    const created = await api.createSession({
      dataset_id: 'synthetic',
      subject_index: subjectIndex,
      budget: 2,
      truth_seed: 7,
    });
    const id = created.session_id;
    const option = created.question!.options[0].pool_index;

    const once = await api.submitAnswer(id, 'tok-1', { kind: 'preferred', index: option });
    expect(once.round).toBe(1);
    const retry = await api.submitAnswer(id, 'tok-1', { kind: 'preferred', index: option });
    expect(retry.round).toBe(1); // replayed token is a no-op
    expect((await api.getTranscript(id)).entries).toHaveLength(1);

    const fresh = await api.submitAnswer(id, 'tok-2', { kind: 'auto' });
    expect(fresh.round).toBe(2);
    expect((await api.getTranscript(id)).entries).toHaveLength(2);
  });
});
