from django.db import migrations, models
import django.db.models.deletion
import pole.models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='Category',
            fields=[
                ('id', models.AutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('corpus', models.CharField(max_length=30)),
                ('class_index', models.PositiveSmallIntegerField()),
                ('name', models.CharField(max_length=40, validators=[pole.models.validate_not_blank])),
            ],
            options={
                'verbose_name_plural': 'Categories',
                'ordering': ['corpus', 'class_index'],
                'unique_together': {('corpus', 'class_index'), ('corpus', 'name')},
            },
        ),
        migrations.CreateModel(
            name='Synonym',
            fields=[
                ('id', models.AutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('rank', models.PositiveSmallIntegerField()),
                ('word', models.CharField(max_length=40, validators=[pole.models.validate_not_blank])),
                ('category', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, to='pole.category')),
            ],
            options={
                'ordering': ['category', 'rank'],
                'unique_together': {('category', 'rank'), ('category', 'word')},
            },
        ),
    ]
