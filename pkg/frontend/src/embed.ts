/**
 * Embeddable entry: attaches the probe to the page's global scope so a
 * test page can call it without a module system.
 *
 *   <script type="module" src="dist/embed.js"></script>
 *   <script>emeProbe.probeRun({...})</script>
 */

import { probeReopen, probeRun } from "./probe.js";

(globalThis as Record<string, unknown>).emeProbe = { probeRun, probeReopen };
