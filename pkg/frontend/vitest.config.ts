import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    // The integration suite spawns the Python service and synthesizes a
    // corpus before any request goes out, so hooks get a generous budget.
    testTimeout: 60_000,
    hookTimeout: 120_000,
  },
});
