export { BackendMode, initBackend, tf, ValidationBackendError } from "./backend.js";
export {
  EventStream,
  FormatError,
  Manifest,
  ManifestEntry,
  PfmImage,
  ValidationError,
  entriesFor,
  readEvtb,
  readFlowPfm,
  readManifest,
  readPfm,
  writeFlowPfm,
  writePfm,
} from "./io.js";
export { Prng } from "./prng.js";
export { activityMap, voxelizeEvents } from "./voxel.js";
export { Conv, Params, lrelu, makeConv, sampleBilinear, upsample2d, warpBilinear } from "./nn.js";
export { Egdc, EgdcState, deformableConv2d } from "./egdc.js";
export { DNet, DNetConfig, DNET_DEFAULTS, dnetConfig } from "./dnet.js";
export { TNet, TNetConfig, TNET_DEFAULTS, tnetConfig, warpByFlow } from "./tnet.js";
export {
  LAMBDA1_DEFAULT,
  LAMBDA2_DEFAULT,
  Perceptual,
  mse,
  psnr,
  restorationLoss,
} from "./loss.js";
export {
  Checkpoint,
  EpochLog,
  Model,
  Sample,
  ToyTrainConfig,
  ToyTrainResult,
  TRAIN_DEFAULTS,
  cosineLr,
  cropSample,
  loadCheckpoint,
  loadSample,
  saveCheckpoint,
  stepLoss,
  trainToy,
  validationLoss,
} from "./train.js";
