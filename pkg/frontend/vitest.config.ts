import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // the runtime round-trip test paces in real time
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
