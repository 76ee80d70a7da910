/**
 * Error types and the process exit codes they map to.
 *
 * Mirrors the simulator CLI convention: 0 success, 2 invalid configuration
 * or arguments, 3 I/O or malformed file.
 */

export const EXIT_OK = 0;
export const EXIT_CONFIG = 2;
export const EXIT_IO = 3;

export class ExporterError extends Error {
  readonly exitCode: number = 1;
}

/** Invalid job description, argument, or unavailable encoder model. */
export class ConfigError extends ExporterError {
  override readonly exitCode = EXIT_CONFIG;
}

/** Malformed or inconsistent embedding file. */
export class FormatError extends ExporterError {
  override readonly exitCode = EXIT_IO;
}

/** Filesystem failure while reading inputs or writing the export. */
export class IoError extends ExporterError {
  override readonly exitCode = EXIT_IO;
}
