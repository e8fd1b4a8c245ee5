import argparse
import sys
from pathlib import Path

from dotenv import load_dotenv
from loguru import logger

from utils.errors import RegistrationError


def _add_config(parser, required: bool = False):
    parser.add_argument("-c", "--config", type=str, default=None, required=required,
                        help="训练配置文件路径 (TOML)，缺省使用 profile 默认值")
    parser.add_argument("--profile", type=str, default=None, help="预设配置：desk / full / full-sweep-best / smoke")


def _add_output(parser, default: str):
    parser.add_argument("-o", "--output-dir", type=str, default=default, help="输出目录")


def make_parser():
    parser = argparse.ArgumentParser(description="量化瓶颈可变形配准：数据合成、训练、配准与评估")
    parser.add_argument("--log-level", type=str, default="INFO", help="终端日志级别")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="生成合成配准数据")
    _add_config(p)
    _add_output(p, "./data/synth")
    p.add_argument("-n", "--n-pairs", type=int, default=None, help="样本对数量")
    p.add_argument("--seed", type=int, default=None, help="起始随机种子")
    p.add_argument("--amplitude", type=float, default=None, help="形变幅度 (mm)")

    p = sub.add_parser("train-seg", help="训练分割网络")
    _add_config(p)
    _add_output(p, "./runs/seg")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("init-codebook", help="用分割网络特征 K-means 初始化协同码本")
    _add_config(p)
    _add_output(p, "./runs/seg")
    p.add_argument("--seg-checkpoint", type=str, required=True, help="分割网络 checkpoint")
    p.add_argument("--out", type=str, default=None, help="码本输出路径，缺省为 <output-dir>/collaborative.cb")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="训练配准网络")
    _add_config(p)
    _add_output(p, "./runs/train")
    p.add_argument("--init-collaborative", type=str, default=None, help="协同码本文件 (init-codebook 的输出)")
    p.add_argument("--quantizers", type=str, default=None, help="启用的量化器，例如 v+h+c 或 none")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("register", help="用 checkpoint 配准一对图像")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--moving", type=str, required=True)
    p.add_argument("--fixed", type=str, required=True)
    p.add_argument("--out-ddf", type=str, required=True, help="DDF 输出路径")
    p.add_argument("--warped", type=str, default=None, help="变形后 moving 图像路径")
    p.add_argument("--moving-mask", type=str, default=None)
    p.add_argument("--fixed-mask", type=str, default=None)
    p.add_argument("--moving-landmarks", type=str, default=None)
    p.add_argument("--fixed-landmarks", type=str, default=None)

    p = sub.add_parser("evaluate", help="在测试集上评估 checkpoint")
    _add_config(p)
    _add_output(p, "./runs/eval")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--split", type=str, default="test", choices=["train", "val", "test"])

    p = sub.add_parser("ablate", help="量化器消融实验")
    _add_config(p)
    _add_output(p, "./runs/ablation")
    p.add_argument("--arms", type=str, nargs="*", default=None,
                   help="实验组，例如 none v v+h v+c:random v+c v+h+c")
    p.add_argument("--seeds", type=int, nargs="*", default=None)

    p = sub.add_parser("sweep-dict-size", help="字典大小扫描")
    _add_config(p)
    _add_output(p, "./runs/sweep")
    p.add_argument("--sizes", type=int, nargs="*", default=None, help="字典大小列表，缺省 32 64 128 256")
    p.add_argument("--which", type=str, default="both", choices=["v", "c", "both"])
    p.add_argument("--seeds", type=int, nargs="*", default=None)
    return parser


def _config(args):
    from .config import build_config, load_train_config

    if args.config:
        return load_train_config(args.config, args.profile)
    return build_config({}, args.profile)


def _seed(args, config) -> int:
    return args.seed if getattr(args, "seed", None) is not None else config.run.seeds[0]


def run(args):
    from utils.logger import add_file_sink

    if args.command == "register":
        from .register import register_files

        add_file_sink(str(Path(args.out_ddf).parent), "register")
        register_files(args.checkpoint, args.moving, args.fixed, args.out_ddf, args.warped,
                       moving_mask=args.moving_mask, fixed_mask=args.fixed_mask,
                       moving_landmarks=args.moving_landmarks, fixed_landmarks=args.fixed_landmarks)
        return

    config = _config(args)
    output_dir = Path(args.output_dir)
    add_file_sink(str(output_dir), args.command)
    config.write_echo(output_dir)

    if args.command == "synth-data":
        from .data import write_synthetic

        update = {k: v for k, v in (("n_pairs", args.n_pairs), ("seed", args.seed),
                                    ("deform_amplitude", args.amplitude)) if v is not None}
        written = write_synthetic(config.data.model_copy(update=update), output_dir)
        logger.success(f"{len(written)} synthetic pairs written to {output_dir}")
        return

    from .data import build_dataset

    data = build_dataset(config.data)

    if args.command == "train-seg":
        from codebook_bootstrap.seg_train import segmentation_dsc, segmentation_pairs, train_segmentation
        from regnet.checkpoint import save_seg_checkpoint

        seed = _seed(args, config)
        boot = config.bootstrap.model_copy(update={"seed": seed})
        model = train_segmentation(segmentation_pairs(data.train), boot)
        save_seg_checkpoint(output_dir / "seg.pt", model)
        logger.success(f"segmentation checkpoint written to {output_dir / 'seg.pt'}, "
                       f"val DSC={segmentation_dsc(model, segmentation_pairs(data.val or data.train)):.4f}")

    elif args.command == "init-codebook":
        from codebook_bootstrap.harvest import compare_initializations, harvest_features, init_collaborative
        from codebook_bootstrap.seg_train import segmentation_pairs
        from regnet.checkpoint import load_seg_checkpoint
        from vq_core.codebook import save_codebook

        seed = _seed(args, config)
        seg_model = load_seg_checkpoint(args.seg_checkpoint)
        c_c = config.network.dict_channels[2]
        features = harvest_features(seg_model, [p[0] for p in segmentation_pairs(data.train)],
                                    cap=config.bootstrap.feature_cap, seed=seed, expected_channels=c_c)
        codebook = init_collaborative(features, config.bootstrap.K_c, seed, config.bootstrap.kmeans_max_iters)
        out = args.out or str(output_dir / "collaborative.cb")
        save_codebook(out, codebook)
        if data.val:
            heldout = harvest_features(seg_model, [p[0] for p in segmentation_pairs(data.val)],
                                       expected_channels=c_c)
            compare_initializations(features, heldout, config.bootstrap.K_c).to_csv(
                output_dir / "init_comparison.csv", index=False)
        logger.success(f"collaborative codebook K={codebook.K} C={codebook.C} written to {out}")

    elif args.command == "train":
        from vq_core.codebook import load_codebook

        from .trainer import train

        if args.quantizers is not None:
            names = [] if args.quantizers == "none" else args.quantizers.split("+")
            config = config.model_copy(update={"network": config.network.with_quantizers(names)})
        codebook = load_codebook(args.init_collaborative) if args.init_collaborative else None
        result = train(config, data, output_dir, seed=_seed(args, config), collaborative_codebook=codebook)
        logger.success(f"final loss={result.final_loss:.6f}, best val DSC={result.best_val_dsc:.4f}, "
                       f"final gap={result.final_gap:.4f}")

    elif args.command == "evaluate":
        from metrics_eval.report import comparison_table

        from .evaluate import evaluate_identity, evaluate_model, load_for_evaluation

        model = load_for_evaluation(args.checkpoint, config.data.model_dims)
        samples = data.split(args.split)
        report = evaluate_model(model, samples, Path(args.checkpoint).stem, config.echo(), config.run.max_workers)
        baseline = evaluate_identity(samples, config.echo(), config.run.max_workers)
        report.save(output_dir)
        table = comparison_table([baseline, report])
        table.output_csv(output_dir / "comparison.csv")
        table.pretty_print()

    elif args.command == "ablate":
        from .ablation import DEFAULT_ARMS, parse_arm, run_ablation

        arms = [parse_arm(a) for a in args.arms] if args.arms else DEFAULT_ARMS
        run_ablation(config, data, output_dir, arms, args.seeds)

    elif args.command == "sweep-dict-size":
        from .sweep import DESK_SIZES, run_dict_size_sweep

        run_dict_size_sweep(config, data, output_dir, args.sizes or DESK_SIZES, args.which, args.seeds)


if __name__ == "__main__":
    parser = make_parser()
    args = parser.parse_args()

    load_dotenv()

    from utils.logger import configure_logger
    configure_logger(args.log_level)

    try:
        run(args)
    except (RegistrationError, FileNotFoundError) as e:
        logger.error(f"{args.command} failed: {e}")
        sys.exit(1)
