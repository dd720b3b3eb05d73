import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    // The live test spawns the render service and waits for a cold cache to
    // stream in, which can take a while on a loaded machine.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
