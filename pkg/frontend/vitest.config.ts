import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // round-trip tests spawn python3 and encode a 500-sample probe
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
