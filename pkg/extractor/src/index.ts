export {
  DetectorError,
  StubDetector,
  loadDetector,
  type BackendName,
  type Detection,
  type PoseDetector,
} from "./detector.js";
export { runExtraction, type ExtractionJob, type ExtractionSummary } from "./extract.js";
export { decodeDimensions, type ImageDimensions } from "./images.js";
export {
  parseManifest,
  type ManifestDiagnostic,
  type ManifestEntry,
  type ManifestParseResult,
} from "./manifest.js";
export { mapOrdered, collectOrdered } from "./pool.js";
export { RecordError, serializeRecord, type Keypoint, type LandmarkRecord } from "./records.js";
export {
  POSE2D17,
  POSE3D33,
  TOPOLOGIES,
  isTopologyName,
  type Topology,
  type TopologyName,
} from "./topology.js";
export { main } from "./cli.js";
