import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'happy-dom',
    // same origin as the server the flow test spawns, so window fetch is
    // not blocked by happy-dom's same-origin policy
    environmentOptions: { happyDOM: { url: 'http://127.0.0.1:8893' } },
    include: ['tests/**/*.test.ts'],
    testTimeout: 120_000,
    hookTimeout: 120_000,
    // the flow test drives one live server; keep files sequential
    fileParallelism: false,
  },
});
